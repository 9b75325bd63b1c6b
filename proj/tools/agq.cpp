// Command-line harness for the quantized-training toolkit: codec roundtrips,
// gradient-error bound sweeps, toy-layer error measurement, pipeline
// bit-width planning, simulated FP8 all-reduce, and memory tables.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "agq/collective.hpp"
#include "agq/dbca.hpp"
#include "agq/layers.hpp"
#include "agq/memmodel.hpp"
#include "agq/sweep.hpp"
#include "agq/tensor_io.hpp"
#include "json.hpp"

using nlohmann::json;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "text";  // text | json | csv
  std::string config;
};

void emit(const GlobalOpts& g, const std::string& payload) {
  if (g.out.empty()) {
    std::cout << payload;
    if (!payload.empty() && payload.back() != '\n') std::cout << "\n";
    return;
  }
  std::ofstream os(g.out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file: " + g.out);
  os << payload;
}

struct InputSpec {
  std::optional<std::size_t> normal;
  std::vector<double> constant;  // [value]
  std::vector<double> uniform;   // [a, b]
  std::size_t elements = 4096;

  std::vector<float> materialize(std::uint64_t seed) const {
    std::size_t n = elements;
    if (normal) n = *normal;
    std::vector<float> v(n);
    agq::Rng rng = agq::make_rng(seed, 0x1D);
    if (!constant.empty()) {
      std::fill(v.begin(), v.end(), static_cast<float>(constant[0]));
    } else if (!uniform.empty()) {
      if (!(uniform[0] <= uniform[1]))
        throw std::invalid_argument("--uniform needs a <= b");
      std::uniform_real_distribution<float> u(
          static_cast<float>(uniform[0]), static_cast<float>(uniform[1]));
      for (auto& x : v) x = u(rng);
    } else {
      std::normal_distribution<float> gauss(0.0f, 1.0f);
      for (auto& x : v) x = gauss(rng);
    }
    return v;
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--normal", normal,
                    "draw N standard normal elements");
    cmd->add_option("--const", constant, "constant value")->expected(1);
    cmd->add_option("--uniform", uniform, "uniform in [a, b]")->expected(2);
    cmd->add_option("--elements", elements,
                    "element count for --const/--uniform/default input");
  }
};

// Optional JSON config file; command-line flags win over file values.
void apply_config(CLI::App& app, const std::string& path) {
  if (path.empty()) return;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  json cfg = json::parse(is);
  std::function<void(CLI::App*, const json&)> walk = [&](CLI::App* cmd,
                                                         const json& node) {
    for (auto& [key, value] : node.items()) {
      if (value.is_object()) {
        if (auto* sub = cmd->get_subcommand_no_throw(key)) walk(sub, value);
        continue;
      }
      CLI::Option* opt = cmd->get_option_no_throw("--" + key);
      if (opt == nullptr || opt->count() > 0) continue;
      if (value.is_array()) {
        std::vector<std::string> parts;
        for (const auto& item : value) parts.push_back(item.dump());
        opt->add_result(parts);
      } else {
        opt->add_result(value.is_string() ? value.get<std::string>()
                                          : value.dump());
      }
      opt->run_callback();
    }
  };
  walk(&app, cfg);
}

agq::CodecKind parse_codec(const std::string& name) {
  if (name == "linear" || name == "symmetric_linear")
    return agq::CodecKind::SymmetricLinear;
  if (name == "fp4" || name == "fp4_e2m1") return agq::CodecKind::Fp4E2M1;
  if (name == "fp8" || name == "fp8_e4m3") return agq::CodecKind::Fp8E4M3;
  throw CLI::ValidationError("--codec", "unknown codec: " + name);
}

int run_quantize(const GlobalOpts& g, const InputSpec& input, int bits,
                 std::uint32_t block, const std::string& codec,
                 const std::string& dump_path) {
  const auto x = input.materialize(g.seed);
  const auto kind = parse_codec(codec);
  const auto q = agq::quantize_blockwise(x, bits, block, kind);
  const auto back = agq::dequantize_blockwise(q);

  double mae = 0.0, max_rel = 0.0, max_abs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = std::fabs(static_cast<double>(back[i]) - x[i]);
    mae += err;
    max_abs = std::max(max_abs, err);
    if (x[i] != 0.0f) max_rel = std::max(max_rel, err / std::fabs(x[i]));
  }
  mae /= static_cast<double>(x.size());
  const double raw_bytes = 4.0 * static_cast<double>(x.size());
  const double packed_bytes =
      std::ceil(static_cast<double>(x.size()) * bits / 8.0) +
      4.0 * static_cast<double>(q.num_blocks());

  json stats{{"elements", x.size()},
             {"bit_width", bits},
             {"block_size", block},
             {"codec", agq::codec_name(kind)},
             {"mae", mae},
             {"max_abs_error", max_abs},
             {"max_rel_error", max_rel},
             {"compression_ratio", raw_bytes / packed_bytes}};
  if (!dump_path.empty()) {
    agq::dump_tensor_file(q, dump_path);
    const auto q2 = agq::load_tensor_file(dump_path);
    stats["dump"] = dump_path;
    stats["dump_roundtrip_exact"] =
        q2.codes == q.codes && q2.scales == q.scales;
  }
  emit(g, stats.dump(2));
  return 0;
}

int run_error_sweep(const GlobalOpts& g, const std::string& layer,
                    const std::string& cases, std::vector<double> epsilons,
                    int trials, int size) {
  std::vector<agq::SweepLayer> layers;
  if (layer == "all") {
    layers = {agq::SweepLayer::RmsNorm, agq::SweepLayer::SiluMul,
              agq::SweepLayer::RmsNormGemm, agq::SweepLayer::Attention};
  } else if (layer == "rmsnorm") {
    layers = {agq::SweepLayer::RmsNorm};
  } else if (layer == "silu" || layer == "silu_mul") {
    layers = {agq::SweepLayer::SiluMul};
  } else if (layer == "gemm" || layer == "rmsnorm_gemm") {
    layers = {agq::SweepLayer::RmsNormGemm};
  } else if (layer == "attention") {
    layers = {agq::SweepLayer::Attention};
  } else {
    throw CLI::ValidationError("--layer", "unknown layer: " + layer);
  }
  std::set<agq::CaseMode> modes;
  if (cases == "1" || cases == "both") modes.insert(agq::CaseMode::Case1Recompute);
  if (cases == "2" || cases == "both") modes.insert(agq::CaseMode::Case2Cache);
  if (modes.empty())
    throw CLI::ValidationError("--cases", "expected 1, 2 or both");

  std::vector<agq::ErrorReport> reports;
  for (auto l : layers) {
    auto part = agq::bound_sweep(l, modes, epsilons, trials, g.seed, size);
    reports.insert(reports.end(), part.begin(), part.end());
  }
  if (g.format == "json") {
    emit(g, agq::reports_to_json(reports).dump(2));
  } else {
    std::ostringstream os;
    agq::write_reports_csv(reports, os);
    emit(g, os.str());
  }
  return 0;
}

int run_layer_error(const GlobalOpts& g, const std::string& policy_name,
                    int bits, int seq, int dim, int hidden_mult) {
  agq::ActivationPolicy policy;
  if (policy_name == "full") {
    policy = agq::ActivationPolicy::all_full();
  } else if (policy_name == "agoq") {
    policy = agq::ActivationPolicy::agoq_default(bits);
  } else if (policy_name == "attn-quant") {
    policy = agq::ActivationPolicy::agoq_default(bits);
    policy.entries[agq::LayerRole::Attention] = {
        bits, agq::SaveStrategy::CacheIntermediates};
  } else {
    throw CLI::ValidationError("--policy",
                               "expected full, agoq or attn-quant");
  }
  const auto params = agq::LayerParams::random(seq, dim, hidden_mult, g.seed);
  agq::Rng rng = agq::make_rng(g.seed, 0x11);
  const agq::Mat x = agq::random_matrix(seq, dim, rng);
  const auto errors = agq::measure_layer_gradient_error(params, x, policy,
                                                        g.seed + 1);
  if (g.format == "csv") {
    std::ostringstream os;
    os << "role,mae,normalized_l2\n";
    for (const auto& [role, e] : errors)
      os << role << "," << e.mae << "," << e.normalized_l2 << "\n";
    emit(g, os.str());
  } else if (g.format == "json") {
    json j;
    for (const auto& [role, e] : errors)
      j[role] = {{"mae", e.mae}, {"normalized_l2", e.normalized_l2}};
    emit(g, j.dump(2));
  } else {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "%-18s %14s %14s\n", "role", "mae",
                  "normalized_l2");
    os << line;
    for (const auto& [role, e] : errors) {
      std::snprintf(line, sizeof(line), "%-18s %14.6e %14.6f\n", role.c_str(),
                    e.mae, e.normalized_l2);
      os << line;
    }
    emit(g, os.str());
  }
  return 0;
}

int run_dbca(const GlobalOpts& g, int n_stages, int micro_batches,
             int reuse_onto, double minibatch_bytes) {
  agq::PipelineConfig cfg{n_stages, micro_batches, 2};
  if (micro_batches == 0) cfg.micro_batches = 2 * n_stages;
  const auto plan = agq::plan_bit_widths(cfg);
  const auto check = agq::peak_memory_check(plan, minibatch_bytes);
  json j = agq::plan_to_json(plan, check);
  if (reuse_onto > 0) {
    agq::PipelineConfig high{reuse_onto, 2 * reuse_onto, 2};
    const auto reuse = agq::plan_reuse_check(cfg, high);
    j["reuse"] = {{"onto_stages", reuse_onto},
                  {"applied_bits", reuse.applied_bits},
                  {"peak", reuse.peak},
                  {"uniform4_peak", reuse.uniform4_peak},
                  {"pass", reuse.pass}};
  }
  if (g.format == "text") {
    std::ostringstream os;
    os << "stages: " << plan.n_stages << "\ncounts:";
    for (const auto& s : plan.stages) os << " " << s.stored_minibatches;
    os << "\nassigned bits: ";
    for (std::size_t i = 0; i < plan.stages.size(); ++i)
      os << (i ? ", " : "") << plan.stages[i].assigned_bits;
    os << "\npeak check: " << (check.pass ? "PASS" : "FAIL") << "\n";
    if (reuse_onto > 0)
      os << "reuse onto " << reuse_onto << " stages: "
         << (j["reuse"]["pass"].get<bool>() ? "PASS" : "FAIL") << "\n";
    emit(g, os.str());
  } else {
    emit(g, j.dump(2));
  }
  return 0;
}

int run_allreduce(const GlobalOpts& g, const InputSpec& input, int workers,
                  const std::string& protocol, const std::string& trace_path) {
  std::vector<agq::WorkerState> world;
  for (int r = 0; r < workers; ++r) {
    InputSpec per = input;
    const auto vals = per.materialize(g.seed + r);
    world.push_back(agq::WorkerState::make(
        r, workers,
        agq::quantize_blockwise(vals, 8, 128, agq::CodecKind::Fp8E4M3)));
  }
  const auto oracle = agq::allreduce_oracle(world);

  agq::Protocol proto;
  if (protocol == "decomposed") proto = agq::Protocol::Decomposed;
  else if (protocol == "naive") proto = agq::Protocol::Naive;
  else if (protocol == "oracle") proto = agq::Protocol::Oracle;
  else
    throw CLI::ValidationError("--protocol",
                               "expected decomposed, naive or oracle");

  const auto run = agq::run_protocol_trace(world, proto);
  json j{{"protocol", protocol},
         {"workers", workers},
         {"elements", world.front().main_gradient.num_elements()}};
  if (proto == agq::Protocol::Oracle) {
    double l2 = 0.0;
    for (float v : run.oracle_values) l2 += static_cast<double>(v) * v;
    j["oracle_l2"] = std::sqrt(l2);
  } else {
    const auto vals = agq::dequantize_blockwise(run.collective.outputs[0]);
    double max_dev = 0.0, l2 = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      max_dev = std::max(max_dev,
                         std::fabs(static_cast<double>(vals[i]) - oracle[i]));
      l2 += static_cast<double>(vals[i]) * vals[i];
    }
    j["result_l2"] = std::sqrt(l2);
    j["max_abs_dev_vs_oracle"] = max_dev;
    j["overflow_total"] = run.collective.overflow_elements;
    j["message_count"] = run.collective.trace.events.size();
    j["payload_bytes"] = run.collective.trace.total_bytes();
    if (!trace_path.empty()) {
      std::ofstream os(trace_path);
      if (!os) throw std::runtime_error("cannot open trace file: " + trace_path);
      run.collective.trace.write_jsonl(os);
      j["trace"] = trace_path;
    }
  }
  emit(g, j.dump(2));
  return 0;
}

int run_memory_table(const GlobalOpts& g, const std::string& scheme) {
  std::vector<agq::Scheme> schemes;
  if (scheme == "all") {
    schemes = {agq::Scheme::MegatronBf16, agq::Scheme::Coat, agq::Scheme::Agoq};
  } else if (scheme == "megatron" || scheme == "megatron_bf16") {
    schemes = {agq::Scheme::MegatronBf16};
  } else if (scheme == "coat") {
    schemes = {agq::Scheme::Coat};
  } else if (scheme == "agoq") {
    schemes = {agq::Scheme::Agoq};
  } else {
    throw CLI::ValidationError("--scheme",
                               "expected megatron, coat, agoq or all");
  }
  if (g.format == "json") emit(g, agq::scheme_table_json(schemes).dump(2));
  else if (g.format == "csv") emit(g, agq::render_scheme_table_csv(schemes));
  else emit(g, agq::render_scheme_table_text(schemes));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  GlobalOpts g;
  CLI::App app{"quantized-training toolkit"};
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "root random seed");
  app.add_option("--out", g.out, "output file (default stdout)");
  app.add_option("--format", g.format, "output format: text, json or csv");
  app.add_option("--config", g.config,
                 "JSON config file with the same keys as the flags");

  auto* quantize = app.add_subcommand("quantize", "block-wise codec roundtrip")->fallthrough();
  InputSpec qinput;
  qinput.attach(quantize);
  int qbits = 4;
  std::uint32_t qblock = 128;
  std::string qcodec = "linear";
  std::string qdump;
  quantize->add_option("--bits", qbits, "bit width in [4, 8]");
  quantize->add_option("--block", qblock, "block size");
  quantize->add_option("--codec", qcodec, "linear, fp4 or fp8");
  quantize->add_option("--dump", qdump, "write the AGQT binary dump here");

  auto* sweep = app.add_subcommand("error-sweep",
                                   "gradient error vs theoretical bounds")->fallthrough();
  std::string slayer = "all", scases = "both";
  std::vector<double> seps = {1e-2, 1e-3, 1e-4};
  int strials = 100, ssize = 64;
  sweep->add_option("--layer", slayer,
                    "rmsnorm, silu, gemm, attention or all");
  sweep->add_option("--cases", scases, "1, 2 or both");
  sweep->add_option("--epsilons", seps, "perturbation levels");
  sweep->add_option("--trials", strials, "trials per cell");
  sweep->add_option("--size", ssize, "d for vector ops, L for attention");

  auto* layer = app.add_subcommand("layer-error",
                                   "toy-layer per-role gradient error")->fallthrough();
  std::string lpolicy = "agoq";
  int lbits = 4, lseq = 32, ldim = 64, lhidden = 4;
  layer->add_option("--policy", lpolicy, "full, agoq or attn-quant");
  layer->add_option("--bits", lbits, "storage bit width");
  layer->add_option("--seq", lseq, "sequence length");
  layer->add_option("--dim", ldim, "model dimension");
  layer->add_option("--hidden-mult", lhidden, "FFN expansion (4 or 8)");

  auto* dbca = app.add_subcommand("dbca-plan",
                                  "pipeline bit-width compensation plan")->fallthrough();
  int dstages = 4, dmicro = 0, dreuse = 0;
  double dbytes = 16.0;
  dbca->add_option("stages", dstages, "pipeline stage count")->required();
  dbca->add_option("--micro-batches", dmicro,
                   "micro-batches (default 2x stages)");
  dbca->add_option("--reuse-onto", dreuse,
                   "also check reuse onto this larger stage count");
  dbca->add_option("--minibatch-bytes", dbytes,
                   "bytes per stored mini-batch at 16-bit");

  auto* ar = app.add_subcommand("allreduce-sim",
                                "simulated FP8 all-reduce across workers")->fallthrough();
  InputSpec arinput;
  arinput.attach(ar);
  int aworkers = 4;
  std::string aprotocol = "decomposed", atrace;
  ar->add_option("--workers", aworkers, "data-parallel worker count");
  ar->add_option("--protocol", aprotocol, "decomposed, naive or oracle");
  ar->add_option("--trace", atrace, "write the message trace (JSON lines)");

  auto* mem = app.add_subcommand("memory-table",
                                 "per-operation activation memory in U")->fallthrough();
  std::string mscheme = "all";
  mem->add_option("--scheme", mscheme, "megatron, coat, agoq or all");

  try {
    app.parse(argc, argv);
    apply_config(app, g.config);
    if (quantize->parsed())
      return run_quantize(g, qinput, qbits, qblock, qcodec, qdump);
    if (sweep->parsed())
      return run_error_sweep(g, slayer, scases, seps, strials, ssize);
    if (layer->parsed())
      return run_layer_error(g, lpolicy, lbits, lseq, ldim, lhidden);
    if (dbca->parsed()) return run_dbca(g, dstages, dmicro, dreuse, dbytes);
    if (ar->parsed())
      return run_allreduce(g, arinput, aworkers, aprotocol, atrace);
    if (mem->parsed()) return run_memory_table(g, mscheme);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    json err{{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return e.get_exit_code();
  } catch (const std::exception& e) {
    json err{{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
