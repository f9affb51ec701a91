// m2gnn: dataset generation, training, evaluation and inspection.
//
// Configuration precedence (lowest first): built-in defaults, the `.cfg` file
// written next to a checkpoint, --config (or $M2GNN_CONFIG), individual flags.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "m2gnn/m2gnn.hpp"

namespace fs = std::filesystem;
using namespace m2gnn;

namespace {

// Hyperparameter flags: --name maps to RunConfig key.
const std::vector<std::pair<std::string, std::string>> kHyperFlags{
    {"dim", "dim"},
    {"layers", "layers"},
    {"k-max", "k_max"},
    {"gamma", "gamma"},
    {"lambda", "lambda"},
    {"lr", "lr"},
    {"batch", "batch"},
    {"epochs", "epochs"},
    {"neighbor-cap", "neighbor_cap"},
    {"routing-iters", "routing_iters"},
    {"pad-mask", "pad_mask"},
    {"skipgram-form", "skipgram_form"},
    {"use-skipgram", "use_skipgram"},
    {"variant", "variant"},
    {"init-scale", "init_scale"},
    {"attention-init-scale", "attention_init_scale"},
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  unsigned threads = 1;
  std::vector<std::string> hyper = std::vector<std::string>(kHyperFlags.size());
};

std::string sidecar(const std::string& checkpoint) { return checkpoint + ".cfg"; }

RunConfig resolve_config(const Globals& g, const std::string& checkpoint = {}) {
  RunConfig cfg;
  if (!checkpoint.empty() && fs::exists(sidecar(checkpoint))) {
    apply_config_text(cfg, detail::read_file(sidecar(checkpoint)), sidecar(checkpoint));
  }
  std::string path = g.config;
  if (path.empty()) {
    if (const char* env = std::getenv("M2GNN_CONFIG")) path = env;
  }
  if (!path.empty()) apply_config_text(cfg, detail::read_file(path), path);
  for (std::size_t i = 0; i < kHyperFlags.size(); ++i) {
    if (!g.hyper[i].empty()) cfg.apply(kHyperFlags[i].second, g.hyper[i]);
  }
  if (g.seed) cfg.set_seed(*g.seed);
  cfg.validate();
  return cfg;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

void check_shape(const ModelParams& p, const Dataset& ds, const RunConfig& cfg) {
  if (p.user.rows() != ds.users() || p.item.rows() != ds.items() || p.tag.rows() != ds.tags()) {
    throw ValidationError("checkpoint does not match the dataset's node counts");
  }
  if (p.dim() != cfg.model.dim) {
    throw ValidationError("checkpoint has d=" + std::to_string(p.dim()) + " but config says d=" +
                          std::to_string(cfg.model.dim));
  }
}

std::string epoch_line(const EpochLog& l, bool improved) {
  return "epoch=" + std::to_string(l.epoch) + " loss=" + format_real(l.loss) + " bpr=" + format_real(l.bpr) +
         " skipgram=" + format_real(l.skipgram) + " l2=" + format_real(l.l2) +
         " validation_recall=" + format_real(l.validation_recall) + " skipped=" + std::to_string(l.skipped) +
         (improved ? " best" : "") + "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tag-based cross-domain recommender with metapath multi-interest aggregation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "Seed for initialization, sampling and routing")->type_name("N");
  app.add_option("--config", g.config, "key = value configuration file (default: $M2GNN_CONFIG)");
  app.add_option("--threads", g.threads, "Worker threads for scoring")->check(CLI::Range(1u, 256u));
  for (std::size_t i = 0; i < kHyperFlags.size(); ++i) {
    app.add_option("--" + kHyperFlags[i].first, g.hyper[i], "Override '" + kHyperFlags[i].second + "'");
  }

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset with planted interest clusters");
  std::string gen_out;
  std::vector<std::string> gen_set;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--set", gen_set, "Synthetic spec override key=value (repeatable)");

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset; keeps the best epoch by validation recall");
  std::string tr_data, tr_out, tr_log;
  bool tr_f32 = false;
  tr->add_option("--data", tr_data, "Dataset manifest")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--log", tr_log, "Per-epoch log file (default: stderr)");
  tr->add_flag("--f32", tr_f32, "Store the checkpoint with 32-bit reals");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_data, ev_ckpt, ev_split = "test", ev_out;
  bool ev_keep_train = false;
  ev->add_option("--data", ev_data, "Dataset manifest")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--split", ev_split, "validation or test")->check(CLI::IsMember({"validation", "test"}));
  ev->add_option("--out", ev_out, "Report file (default: stdout)");
  ev->add_flag("--keep-train", ev_keep_train, "Do not exclude training positives from the ranking");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train each aggregator variant from scratch on several seeds");
  std::string ab_data, ab_out, ab_runs;
  std::vector<std::string> ab_variants{"full", "hard", "mean", "softmax"};
  std::size_t ab_seeds = 5;
  std::uint64_t ab_base = 1;
  ab->add_option("--data", ab_data, "Dataset manifest")->required();
  ab->add_option("--variants", ab_variants, "Variants to compare")->delimiter(',');
  ab->add_option("--seeds", ab_seeds, "Seeds per variant")->check(CLI::PositiveNumber);
  ab->add_option("--base-seed", ab_base, "First seed");
  ab->add_option("--out", ab_out, "Summary file (default: stdout)");
  ab->add_option("--runs", ab_runs, "Per-run report file");

  // recommend / explain
  auto* rec = app.add_subcommand("recommend", "Top-k items for a user");
  auto* ex = app.add_subcommand("explain", "Routing assignments, attention weights and top-k items for a user");
  std::string q_data, q_ckpt;
  Index q_user = 0;
  std::size_t q_k = 10;
  for (auto* c : {rec, ex}) {
    c->add_option("--data", q_data, "Dataset manifest")->required();
    c->add_option("--checkpoint", q_ckpt, "Checkpoint path")->required();
    c->add_option("--user", q_user, "User index")->required();
    c->add_option("-k,--k", q_k, "Number of items")->check(CLI::PositiveNumber);
  }

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
  std::string gc_data;
  double gc_tol = 1e-4;
  std::size_t gc_batch = 64, gc_coords = 24;
  gc->add_option("--data", gc_data, "Dataset manifest")->required();
  gc->add_option("--tolerance", gc_tol, "Maximum relative error");
  gc->add_option("--triples", gc_batch, "BPR triples (and skip-gram pairs) in the checked batch");
  gc->add_option("--coords", gc_coords, "Coordinates probed per parameter family");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      SyntheticSpec spec;
      for (const auto& kv : gen_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        apply_spec(spec, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (g.seed) spec.seed = *g.seed;
      const auto ds = generate_synthetic(spec);
      const auto manifest = write_synthetic(ds, gen_out);
      std::cout << "manifest=" << manifest.string() << "\n";
      return 0;
    }

    if (*tr) {
      const auto cfg = resolve_config(g);
      const auto ds = load_dataset(tr_data);
      const ModelContext ctx(*ds.graph, ds.manifest.metapaths, cfg.model);
      auto init = ModelParams::initialize(ds.users(), ds.items(), ds.tags(), cfg.model, cfg.train.seed);
      std::string log;
      const auto res = train(ctx, std::move(init), cfg.model, cfg.train, ds.train_index, &ds.validation_index,
                             [&](const EpochLog& l, const ModelParams&, bool improved) {
                               const auto line = epoch_line(l, improved);
                               if (tr_log.empty()) std::cerr << line;
                               log += line;
                             });
      if (!tr_log.empty()) write_text_file(tr_log, log);
      save_checkpoint(res.best, tr_out, tr_f32 ? Precision::F32 : Precision::F64);
      write_text_file(sidecar(tr_out), cfg.to_text());
      std::cout << "checkpoint=" << tr_out << "\nbest_epoch=" << res.best_epoch
                << "\nbest_validation_recall=" << format_real(res.best_validation) << "\n";
      return 0;
    }

    if (*ev) {
      const auto cfg = resolve_config(g, ev_ckpt);
      const auto ds = load_dataset(ev_data);
      const auto params = load_checkpoint(ev_ckpt);
      check_shape(params, ds, cfg);
      const ModelContext ctx(*ds.graph, ds.manifest.metapaths, cfg.model);
      const auto& held = ev_split == "test" ? ds.test_index : ds.validation_index;
      const auto rep = evaluate(ctx, params, cfg.model, held, ds.train_index, !ev_keep_train, {50, 100}, g.threads);
      write_or_print(ev_out, to_key_values(rep));
      return 0;
    }

    if (*ab) {
      const auto base = resolve_config(g);
      const auto ds = load_dataset(ab_data);
      std::vector<AggregatorVariant> vs;
      for (const auto& v : ab_variants) vs.push_back(parse_variant(v));
      std::string runs;
      const auto results = run_ablation(ds, variant_arms(base, vs), ab_seeds, ab_base, g.threads,
                                        [&](const std::string& name, std::uint64_t seed, const EvalReport& r) {
                                          std::cerr << "done variant=" << name << " seed=" << seed
                                                    << " recall@50=" << format_real(r.recall_at(50)) << "\n";
                                          runs += "[run " + name + " " + std::to_string(seed) + "]\n" +
                                                  to_key_values(r);
                                        });
      if (!ab_runs.empty()) write_text_file(ab_runs, runs);
      write_or_print(ab_out, to_key_values(results));
      return 0;
    }

    if (*rec || *ex) {
      const auto cfg = resolve_config(g, q_ckpt);
      const auto ds = load_dataset(q_data);
      const auto params = load_checkpoint(q_ckpt);
      check_shape(params, ds, cfg);
      const ModelContext ctx(*ds.graph, ds.manifest.metapaths, cfg.model);
      if (*rec) {
        for (const auto& r : recommend(ctx, params, cfg.model, ds.train_index, q_user, q_k)) {
          std::cout << r.item << '\t' << format_real(r.score) << '\n';
        }
      } else {
        if (q_user >= ds.users()) throw ValidationError("unknown user " + std::to_string(q_user));
        std::cout << to_text(explain(ctx, params, cfg.model, ds.train_index, q_user, q_k), ds.manifest.metapaths.size());
      }
      return 0;
    }

    if (*gc) {
      const auto cfg = resolve_config(g);
      const auto ds = load_dataset(gc_data);
      const ModelContext ctx(*ds.graph, ds.manifest.metapaths, cfg.model);
      const auto params = ModelParams::initialize(ds.users(), ds.items(), ds.tags(), cfg.model, cfg.train.seed);
      const auto batch = sample_bpr_batch(ds.train_index, gc_batch, cfg.train.seed);
      Rng rng(derive_seed({cfg.train.seed, 0x6cULL}));
      const auto pairs = sample_skipgram_pairs(*ds.graph, gc_batch, rng);
      const auto rep = grad_check(ctx, params, cfg.model, cfg.train, batch.triples, pairs, gc_tol, gc_coords,
                                  cfg.train.seed);
      bool ok = true;
      for (const auto& e : rep.entries) {
        std::cout << "family=" << e.family << " coordinates=" << e.coordinates
                  << " max_rel_error=" << format_real(e.max_rel_error) << " max_abs_grad=" << format_real(e.max_abs_analytic)
                  << " " << (e.pass ? "PASS" : "FAIL") << "\n";
        ok = ok && e.pass;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
