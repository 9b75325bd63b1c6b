#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agq/quantize.hpp"
#include "json.hpp"

namespace agq {

// Gradient element range [start, end) owned by each rank for the reduce
// phase. Ranges partition the flattened tensor, are contiguous by rank, and
// start on block boundaries so every chunk carries whole scales.
struct ChunkAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;

  static ChunkAssignment block_aligned(std::size_t n, std::uint32_t block,
                                       int workers) {
    if (workers < 1) throw std::invalid_argument("need at least one worker");
    const std::size_t blocks = (n + block - 1) / block;
    ChunkAssignment a;
    a.ranges.resize(workers);
    std::size_t next_block = 0;
    for (int r = 0; r < workers; ++r) {
      const std::size_t share =
          blocks / workers + (static_cast<std::size_t>(r) < blocks % workers);
      const std::size_t begin = std::min(n, next_block * block);
      next_block += share;
      const std::size_t end = std::min(n, next_block * block);
      a.ranges[r] = {begin, end};
    }
    return a;
  }
};

struct Message {
  std::string phase;
  int sender = 0;
  std::size_t chunk_start = 0;
  std::vector<std::uint8_t> codes;
  std::vector<float> scales;
};

struct TraceEvent {
  std::string phase;
  int sender = 0;
  int receiver = 0;
  std::size_t chunk_start = 0;
  std::size_t chunk_len = 0;
  std::size_t payload_bytes = 0;
};

struct MessageTrace {
  std::vector<TraceEvent> events;

  std::size_t total_bytes() const {
    std::size_t total = 0;
    for (const auto& e : events) total += e.payload_bytes;
    return total;
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& e : events) {
      nlohmann::json j{{"phase", e.phase},       {"sender", e.sender},
                       {"receiver", e.receiver}, {"chunk_start", e.chunk_start},
                       {"chunk_len", e.chunk_len},
                       {"payload_bytes", e.payload_bytes}};
      os << j.dump() << "\n";
    }
  }
};

// One simulated data-parallel worker: its FP8 main gradient plus an inbox of
// per-sender message queues (reliable, ordered per sender).
struct WorkerState {
  int rank = 0;
  QuantizedTensor main_gradient;
  std::vector<std::deque<Message>> inbox;
  std::uint64_t overflow_events = 0;

  static WorkerState make(int rank, int world,
                          const QuantizedTensor& gradient) {
    if (gradient.codec_kind != CodecKind::Fp8E4M3)
      throw std::invalid_argument("worker gradients are FP8 E4M3 tensors");
    WorkerState w;
    w.rank = rank;
    w.main_gradient = gradient;
    w.inbox.resize(world);
    return w;
  }
};

enum class AccumulatePrecision { Fp32, Bf16, Fp16 };

inline float round_bf16(float x) {
  std::uint32_t u;
  std::memcpy(&u, &x, 4);
  const std::uint32_t lsb = (u >> 16) & 1;
  u += 0x7fffu + lsb;
  u &= 0xffff0000u;
  float out;
  std::memcpy(&out, &u, 4);
  return out;
}

inline float round_fp16(float x) {
  if (x == 0.0f || !std::isfinite(x)) return x;
  const double a = std::fabs(static_cast<double>(x));
  const double sign = x < 0.0f ? -1.0 : 1.0;
  if (a >= 65520.0) return static_cast<float>(sign * 65504.0);
  if (a < 0x1p-14) {  // subnormal quantum 2^-24
    return static_cast<float>(sign * std::nearbyint(a * 0x1p24) * 0x1p-24);
  }
  const int exp = std::ilogb(a);
  const double q = std::nearbyint(std::ldexp(a, 10 - exp));
  return static_cast<float>(sign * std::ldexp(q, exp - 10));
}

// Dequantize the FP8 main gradient, add the local gradient at the chosen
// intermediate precision, and requantize with fresh per-block scales. Fresh
// scales let a growing sum rescale instead of saturating.
inline QuantizedTensor local_accumulate(
    const QuantizedTensor& main, std::span<const float> local_grad,
    AccumulatePrecision precision = AccumulatePrecision::Fp32) {
  if (main.codec_kind != CodecKind::Fp8E4M3)
    throw std::invalid_argument("main gradient must be FP8 E4M3");
  if (main.num_elements() != local_grad.size())
    throw std::invalid_argument("local gradient shape mismatch");
  const auto vals = dequantize_blockwise(main);
  std::vector<float> sum(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!std::isfinite(local_grad[i]))
      throw std::invalid_argument("non-finite local gradient element");
    float s = vals[i] + local_grad[i];
    if (precision == AccumulatePrecision::Bf16) s = round_bf16(s);
    if (precision == AccumulatePrecision::Fp16) s = round_fp16(s);
    sum[i] = s;
  }
  return quantize_blockwise(sum, 8, main.block_size, CodecKind::Fp8E4M3,
                            main.shape);
}

struct CollectiveResult {
  std::vector<QuantizedTensor> outputs;    // one per worker, bit-identical
  MessageTrace trace;
  std::vector<std::uint64_t> overflow_events;  // per worker
  std::uint64_t overflow_elements = 0;  // elements that ever saturated
};

namespace detail {

inline void check_workers(const std::vector<WorkerState>& workers) {
  if (workers.empty()) throw std::invalid_argument("no workers");
  const auto& shape = workers.front().main_gradient.shape;
  const auto block = workers.front().main_gradient.block_size;
  for (const auto& w : workers) {
    if (w.main_gradient.shape != shape || w.main_gradient.block_size != block)
      throw std::invalid_argument(
          "all-reduce aborted: main gradient shapes must match");
    validate(w.main_gradient);
  }
}

inline std::vector<int> resolve_schedule(const std::vector<int>& schedule,
                                         int world) {
  if (schedule.empty()) {
    std::vector<int> s(world);
    std::iota(s.begin(), s.end(), 0);
    return s;
  }
  if (static_cast<int>(schedule.size()) != world)
    throw std::invalid_argument("schedule must permute all workers");
  return schedule;
}

inline Message chunk_message(const QuantizedTensor& q, const std::string& phase,
                             int sender, std::size_t begin, std::size_t end) {
  Message m;
  m.phase = phase;
  m.sender = sender;
  m.chunk_start = begin;
  m.codes.assign(q.codes.begin() + begin, q.codes.begin() + end);
  const std::size_t b0 = begin / q.block_size;
  const std::size_t b1 = (end + q.block_size - 1) / q.block_size;
  m.scales.assign(q.scales.begin() + b0, q.scales.begin() + b1);
  return m;
}

inline void deliver(std::vector<WorkerState>& workers, MessageTrace& trace,
                    int receiver, Message m) {
  TraceEvent e;
  e.phase = m.phase;
  e.sender = m.sender;
  e.receiver = receiver;
  e.chunk_start = m.chunk_start;
  e.chunk_len = m.codes.size();
  e.payload_bytes = m.codes.size() + 4 * m.scales.size();
  trace.events.push_back(e);
  workers[receiver].inbox[m.sender].push_back(std::move(m));
}

}  // namespace detail

// Full-precision ground truth: FP32 sum of all dequantized gradients in
// ascending rank order.
inline std::vector<float> allreduce_oracle(
    const std::vector<WorkerState>& workers) {
  detail::check_workers(workers);
  std::vector<float> acc(workers.front().main_gradient.num_elements(), 0.0f);
  for (const auto& w : workers) {
    const auto vals = dequantize_blockwise(w.main_gradient);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += vals[i];
  }
  return acc;
}

// The decomposed protocol: All-to-All, local FP32 reduce with fresh-scale
// FP8 requantization, then All-Gather. Reduction order is ascending sender
// rank, so results do not depend on the processing schedule.
inline CollectiveResult allreduce_decomposed(
    std::vector<WorkerState>& workers, const std::vector<int>& schedule = {}) {
  detail::check_workers(workers);
  const int world = static_cast<int>(workers.size());
  const auto order = detail::resolve_schedule(schedule, world);
  const auto& proto = workers.front().main_gradient;
  const std::size_t n = proto.num_elements();
  const auto assign = ChunkAssignment::block_aligned(n, proto.block_size, world);

  CollectiveResult result;
  result.overflow_events.assign(world, 0);

  // All-to-All: every rank ships chunk r of its own gradient to rank r.
  for (int s = 0; s < world; ++s) {
    for (int r = 0; r < world; ++r) {
      if (r == s) continue;
      const auto [begin, end] = assign.ranges[r];
      if (begin == end) continue;
      detail::deliver(workers, result.trace, r,
                      detail::chunk_message(workers[s].main_gradient,
                                            "all_to_all", s, begin, end));
    }
  }

  // Local reduce: each rank sums the P copies of its chunk in FP32 in
  // ascending rank order and requantizes with fresh scales.
  std::vector<QuantizedTensor> reduced(world);
  for (int r : order) {
    const auto [begin, end] = assign.ranges[r];
    if (begin == end) continue;
    std::vector<float> acc(end - begin, 0.0f);
    for (int s = 0; s < world; ++s) {
      std::vector<float> piece;
      if (s == r) {
        const auto all = dequantize_blockwise(workers[r].main_gradient);
        piece.assign(all.begin() + begin, all.begin() + end);
      } else {
        if (workers[r].inbox[s].empty())
          throw std::runtime_error("all-reduce aborted: missing chunk message");
        const Message m = std::move(workers[r].inbox[s].front());
        workers[r].inbox[s].pop_front();
        QuantizedTensor part;
        part.codes = m.codes;
        part.scales = m.scales;
        part.bit_width = 8;
        part.block_size = proto.block_size;
        part.codec_kind = CodecKind::Fp8E4M3;
        part.shape = {m.codes.size()};
        piece = dequantize_blockwise(part);
      }
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += piece[i];
    }
    for (float a : acc)
      if (!std::isfinite(a))
        throw std::runtime_error(
            "all-reduce aborted: fp32 overflow during local reduce");
    reduced[r] = quantize_blockwise(acc, 8, proto.block_size,
                                    CodecKind::Fp8E4M3, {acc.size()});
  }

  // All-Gather: owners broadcast their reduced chunk.
  for (int s = 0; s < world; ++s) {
    const auto [begin, end] = assign.ranges[s];
    if (begin == end) continue;
    Message m;
    m.phase = "all_gather";
    m.sender = s;
    m.chunk_start = begin;
    m.codes = reduced[s].codes;
    m.scales = reduced[s].scales;
    for (int r = 0; r < world; ++r) {
      if (r == s) continue;
      detail::deliver(workers, result.trace, r, m);
    }
  }

  // Assemble identical outputs, each worker from its own inbox.
  result.outputs.resize(world);
  for (int r : order) {
    QuantizedTensor out = proto;
    for (int s = 0; s < world; ++s) {
      const auto [begin, end] = assign.ranges[s];
      if (begin == end) continue;
      const std::uint8_t* codes;
      const float* scales;
      std::size_t nscales;
      Message m;
      if (s == r) {
        codes = reduced[r].codes.data();
        scales = reduced[r].scales.data();
        nscales = reduced[r].scales.size();
      } else {
        if (workers[r].inbox[s].empty())
          throw std::runtime_error("all-reduce aborted: missing gather message");
        m = std::move(workers[r].inbox[s].front());
        workers[r].inbox[s].pop_front();
        codes = m.codes.data();
        scales = m.scales.data();
        nscales = m.scales.size();
      }
      std::copy(codes, codes + (end - begin), out.codes.begin() + begin);
      std::copy(scales, scales + nscales,
                out.scales.begin() + begin / proto.block_size);
    }
    result.outputs[r] = std::move(out);
  }
  return result;
}

// The overflow-prone strawman: a ring Reduce-Scatter that adds in FP8 and
// re-encodes at the receiver's original fixed scales, then an All-Gather.
// Saturations are recorded per element (sticky) and per worker (events).
inline CollectiveResult allreduce_naive_fp8(
    std::vector<WorkerState>& workers, const std::vector<int>& schedule = {}) {
  detail::check_workers(workers);
  const int world = static_cast<int>(workers.size());
  (void)detail::resolve_schedule(schedule, world);
  const auto& proto = workers.front().main_gradient;
  const std::size_t n = proto.num_elements();
  const auto assign = ChunkAssignment::block_aligned(n, proto.block_size, world);

  CollectiveResult result;
  result.overflow_events.assign(world, 0);
  std::vector<std::uint8_t> saturated(n, 0);

  std::vector<QuantizedTensor> working;
  working.reserve(world);
  for (const auto& w : workers) working.push_back(w.main_gradient);

  for (int step = 0; step < world - 1; ++step) {
    // Canonical exchange: every rank sends one chunk, receives one chunk.
    std::vector<Message> outgoing(world);
    for (int r = 0; r < world; ++r) {
      const int chunk = ((r - step) % world + world) % world;
      const auto [begin, end] = assign.ranges[chunk];
      Message m = detail::chunk_message(working[r], "reduce_scatter", r, begin,
                                        end);
      outgoing[r] = std::move(m);
    }
    for (int r = 0; r < world; ++r) {
      const int to = (r + 1) % world;
      if (!outgoing[r].codes.empty())
        detail::deliver(workers, result.trace, to, std::move(outgoing[r]));
    }
    for (int r = 0; r < world; ++r) {
      const int from = (r - 1 + world) % world;
      const int chunk = ((r - step - 1) % world + world) % world;
      const auto [begin, end] = assign.ranges[chunk];
      if (begin == end) continue;
      if (workers[r].inbox[from].empty())
        throw std::runtime_error("all-reduce aborted: missing ring message");
      const Message m = std::move(workers[r].inbox[from].front());
      workers[r].inbox[from].pop_front();
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t blk = i / proto.block_size;
        const float in_scale = m.scales[blk - begin / proto.block_size];
        const double incoming =
            code_unit_value(CodecKind::Fp8E4M3, 8, m.codes[i - begin]) *
            in_scale;
        const double local =
            code_unit_value(CodecKind::Fp8E4M3, 8, working[r].codes[i]) *
            working[r].scales[blk];
        const double sum = incoming + local;
        // Re-encode at the receiver's original scale, no rescaling.
        const float scale = workers[r].main_gradient.scales[blk];
        double unit = scale == 0.0f ? 0.0 : sum / scale;
        bool over = false;
        if (scale == 0.0f && sum != 0.0) over = true;
        const auto enc = fp8_encode(unit * fp8::kMaxFinite);
        if (enc.overflow) over = true;
        if (over) {
          ++workers[r].overflow_events;
          ++result.overflow_events[r];
          saturated[i] = 1;
        }
        working[r].codes[i] = enc.value.byte;
        working[r].scales[blk] = scale;
      }
    }
  }

  // All-Gather of the owned chunks. After P-1 steps rank r owns chunk
  // (r + 1) mod P.
  QuantizedTensor gathered = proto;
  for (int chunk = 0; chunk < world; ++chunk) {
    const int owner = world == 1 ? 0 : (chunk - 1 + world) % world;
    const auto [begin, end] = assign.ranges[chunk];
    if (begin == end) continue;
    Message m = detail::chunk_message(working[owner], "all_gather", owner,
                                      begin, end);
    for (int r = 0; r < world; ++r) {
      if (r == owner) continue;
      detail::deliver(workers, result.trace, r, m);
    }
    std::copy(m.codes.begin(), m.codes.end(), gathered.codes.begin() + begin);
    std::copy(m.scales.begin(), m.scales.end(),
              gathered.scales.begin() + begin / proto.block_size);
  }
  // Drain gather messages so inboxes end empty.
  for (auto& w : workers)
    for (auto& q : w.inbox) q.clear();

  result.outputs.assign(world, gathered);
  for (std::uint8_t s : saturated) result.overflow_elements += s;
  return result;
}

enum class Protocol { Decomposed, Naive, Oracle };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Decomposed: return "decomposed";
    case Protocol::Naive: return "naive";
    case Protocol::Oracle: return "oracle";
  }
  return "?";
}

struct ProtocolRun {
  CollectiveResult collective;       // decomposed / naive
  std::vector<float> oracle_values;  // oracle
  Protocol protocol = Protocol::Decomposed;
};

inline ProtocolRun run_protocol_trace(std::vector<WorkerState>& workers,
                                      Protocol protocol,
                                      const std::vector<int>& schedule = {}) {
  ProtocolRun run;
  run.protocol = protocol;
  switch (protocol) {
    case Protocol::Decomposed:
      run.collective = allreduce_decomposed(workers, schedule);
      break;
    case Protocol::Naive:
      run.collective = allreduce_naive_fp8(workers, schedule);
      break;
    case Protocol::Oracle:
      run.oracle_values = allreduce_oracle(workers);
      break;
  }
  return run;
}

}  // namespace agq
