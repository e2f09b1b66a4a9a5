#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coin/checkpoint.hpp"
#include "coin/eval.hpp"
#include "coin/graph.hpp"
#include "coin/parallel.hpp"
#include "coin/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Configuration and input problems exit with code 2; other failures with 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string resolve_data_path(std::string path) {
  // shipped configs reference data/...; COIN_DATA_DIR redirects that prefix
  const char* root = std::getenv("COIN_DATA_DIR");
  if (root && *root && path.rfind("data/", 0) == 0)
    path = std::string(root) + path.substr(4);
  return path;
}

std::string require_file(const std::string& path, const char* what) {
  std::string resolved = resolve_data_path(path);
  if (!fs::exists(resolved))
    throw ConfigError(std::string(what) + " not found: " + resolved);
  return resolved;
}

struct RunConfig {
  std::string dataset = "unnamed";
  std::string task;  // link | rec | cluster
  std::string edge_file;
  std::string label_file;
  std::string label_side = "u";
  std::string test_pos_file, test_neg_file;
  double train_fraction = 0.5;
  double neg_ratio = 1.0;
  std::uint64_t split_seed = 12345;
  bool use_full_graph = false;
  bool use_full_graph_explicit = false;  // config set it, task changes must not
  std::vector<std::size_t> ks = {3, 5, 10};
  std::string feature = "hadamard";
  std::string scoring = "scorer";
  std::string nmi_norm = "arithmetic";
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out;
  double link_l2 = 1e-4;
  std::size_t link_iterations = 500;
  double link_lr = 0.5;
  coin::TrainConfig train;

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config is not valid JSON: " + path + ": " + e.what());
    }
    static const char* known[] = {
        "dataset",    "task",        "edge_file",    "label_file",    "label_side",
        "test_pos_file", "test_neg_file", "train_fraction", "neg_ratio",  "split_seed",
        "use_full_graph", "ks",      "feature",      "scoring",       "nmi_norm",
        "seeds",      "out",         "link_l2",      "link_iterations", "link_lr",
        "train"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) throw ConfigError("unknown config key \"" + it.key() + "\" in " + path);
    }
    RunConfig c;
    try {
      c.dataset = j.value("dataset", c.dataset);
      c.task = j.value("task", c.task);
      c.edge_file = j.value("edge_file", c.edge_file);
      c.label_file = j.value("label_file", c.label_file);
      c.label_side = j.value("label_side", c.label_side);
      c.test_pos_file = j.value("test_pos_file", c.test_pos_file);
      c.test_neg_file = j.value("test_neg_file", c.test_neg_file);
      c.train_fraction = j.value("train_fraction", c.train_fraction);
      c.neg_ratio = j.value("neg_ratio", c.neg_ratio);
      c.split_seed = j.value("split_seed", c.split_seed);
      c.use_full_graph_explicit = j.contains("use_full_graph");
      c.use_full_graph = j.value("use_full_graph", c.task == "cluster");
      if (j.contains("ks")) c.ks = j.at("ks").get<std::vector<std::size_t>>();
      c.feature = j.value("feature", c.feature);
      c.scoring = j.value("scoring", c.scoring);
      c.nmi_norm = j.value("nmi_norm", c.nmi_norm);
      if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      c.out = j.value("out", c.out);
      c.link_l2 = j.value("link_l2", c.link_l2);
      c.link_iterations = j.value("link_iterations", c.link_iterations);
      c.link_lr = j.value("link_lr", c.link_lr);
      if (j.contains("train")) c.train = coin::TrainConfig::from_json(j.at("train"));
    } catch (const json::exception& e) {
      throw ConfigError("bad config value in " + path + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bad config value in " + path + ": " + e.what());
    }
    if (!j.contains("use_full_graph")) c.use_full_graph = c.task == "cluster";
    if (c.task != "link" && c.task != "rec" && c.task != "cluster")
      throw ConfigError("config task must be link|rec|cluster, got \"" + c.task + "\"");
    if (c.edge_file.empty()) throw ConfigError("config lacks edge_file: " + path);
    if (c.seeds.empty()) throw ConfigError("config needs at least one seed: " + path);
    if (c.out.empty()) c.out = "out/" + c.dataset;
    return c;
  }
};

// Flag values that override same-named config fields when present.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::optional<double> lambda, lr, dropout;
  std::optional<std::size_t> clusters_k, clusters_l, epochs;
  std::optional<std::string> loss_form, feature, scoring, out;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "single run seed (replaces the config's seed list)");
    cmd->add_option("--seeds", seeds, "run seeds")->delimiter(',');
    cmd->add_option("--lambda", lambda, "co-cluster MI coefficient");
    cmd->add_option("--clusters-k", clusters_k, "cluster count for the U partition");
    cmd->add_option("--clusters-l", clusters_l, "cluster count for the V partition");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--dropout", dropout, "dropout probability");
    cmd->add_option("--loss-form", loss_form, "instance loss form: literal|log");
    cmd->add_option("--feature", feature, "edge feature mode: hadamard|concat");
    cmd->add_option("--scoring", scoring, "candidate scoring: scorer|dot");
    cmd->add_option("--out", out, "output directory");
  }

  void apply(RunConfig& run) const {
    if (seed && !seeds.empty())
      throw ConfigError("--seed and --seeds are mutually exclusive");
    if (seed) run.seeds = {*seed};
    if (!seeds.empty()) run.seeds = seeds;
    if (lambda) run.train.lambda = *lambda;
    if (clusters_k) run.train.n_k = *clusters_k;
    if (clusters_l) run.train.n_l = *clusters_l;
    if (epochs) run.train.epochs = *epochs;
    if (lr) run.train.lr = *lr;
    if (dropout) run.train.dropout_p = *dropout;
    if (loss_form) run.train.loss_form = coin::parse_loss_form(*loss_form);
    if (feature) run.feature = *feature;
    if (scoring) run.scoring = *scoring;
    if (out) run.out = *out;
    try {
      run.train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

using EdgeList = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

// Test pairs from a file, ids resolved through the graph's maps; pairs with
// ids outside the training vocabulary are skipped and counted.
EdgeList load_pairs(const std::string& path, const coin::BipartiteGraph& graph,
                    std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open pair file: " + path);
  EdgeList out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ss(line);
    std::string ut, vt;
    if (!(ss >> ut >> vt))
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected \"u<TAB>v\"");
    const std::uint32_t* u = graph.u_ids.find(ut);
    const std::uint32_t* v = graph.v_ids.find(vt);
    if (!u || !v) {
      ++(*skipped);
      continue;
    }
    out.emplace_back(*u, *v);
  }
  return out;
}

struct Protocol {
  coin::BipartiteGraph train_graph;
  coin::BipartiteGraph exclusion_graph;  // train plus test positives
  EdgeList test_pos, test_neg;
  std::size_t skipped_pairs = 0;
  bool sampled_test_neg = false;
};

// The training graph and held-out pairs a task evaluates against. With test
// files present the edge file is taken as the training edges; otherwise the
// graph is split by split_seed, identically for every run seed.
Protocol build_protocol(const RunConfig& run) {
  std::string edge_path = require_file(run.edge_file, "edge file");
  coin::BipartiteGraph graph = coin::load_edge_list(edge_path);

  Protocol p;
  if (run.task == "cluster" || run.use_full_graph) {
    p.train_graph = std::move(graph);
    p.exclusion_graph = p.train_graph;
    return p;
  }
  if (!run.test_pos_file.empty()) {
    p.train_graph = std::move(graph);
    p.test_pos = load_pairs(require_file(run.test_pos_file, "test positives file"),
                            p.train_graph, &p.skipped_pairs);
    if (p.test_pos.empty()) throw ConfigError("no usable test positives in " + run.test_pos_file);
    EdgeList union_edges = p.train_graph.edges;
    {
      std::unordered_set<std::uint64_t> seen;
      for (auto [u, v] : union_edges) seen.insert((std::uint64_t(u) << 32) | v);
      for (auto [u, v] : p.test_pos)
        if (seen.insert((std::uint64_t(u) << 32) | v).second) union_edges.emplace_back(u, v);
    }
    p.exclusion_graph = coin::BipartiteGraph::from_edges(p.train_graph.num_u,
                                                         p.train_graph.num_v, union_edges);
    if (!run.test_neg_file.empty()) {
      p.test_neg = load_pairs(require_file(run.test_neg_file, "test negatives file"),
                              p.train_graph, &p.skipped_pairs);
    } else {
      p.sampled_test_neg = true;
      std::size_t want = static_cast<std::size_t>(
          run.neg_ratio * static_cast<double>(p.test_pos.size()) + 0.5);
      coin::RngStream rng = coin::RngStream::derive(run.split_seed, "test-negatives");
      std::unordered_set<std::uint64_t> taken;
      while (p.test_neg.size() < want) {
        auto u = static_cast<std::uint32_t>(rng.uniform_int(p.train_graph.num_u));
        auto v = static_cast<std::uint32_t>(rng.uniform_int(p.train_graph.num_v));
        if (p.exclusion_graph.has_edge(u, v)) continue;
        if (!taken.insert((std::uint64_t(u) << 32) | v).second) continue;
        p.test_neg.emplace_back(u, v);
      }
    }
    return p;
  }
  coin::RngStream split_rng = coin::RngStream::derive(run.split_seed, "split");
  coin::DatasetSplit split = coin::make_split(graph, run.train_fraction, run.neg_ratio, split_rng);
  p.train_graph = std::move(split.train);
  p.test_pos = std::move(split.test_pos);
  p.test_neg = std::move(split.test_neg);
  p.exclusion_graph = std::move(graph);
  return p;
}

std::string ckpt_path(const RunConfig& run, std::uint64_t seed) {
  return run.out + "/seed" + std::to_string(seed) + ".ckpt";
}

int cmd_train(const std::string& config_path, const Overrides& ov, bool parallel_seeds,
              bool deterministic) {
  RunConfig run = RunConfig::from_file(config_path);
  ov.apply(run);
  if (deterministic) coin::set_thread_override(1);
  Protocol proto = build_protocol(run);
  fs::create_directories(run.out);
  proto.train_graph.u_ids.write(run.out + "/u_idmap.tsv");
  proto.train_graph.v_ids.write(run.out + "/v_idmap.tsv");

  std::cout << "dataset " << run.dataset << ": |U|=" << proto.train_graph.num_u
            << " |V|=" << proto.train_graph.num_v
            << " train edges=" << proto.train_graph.edges.size() << "\n";

  auto run_one = [&](std::uint64_t seed) {
    coin::TrainConfig cfg = run.train;
    cfg.seed = seed;
    auto [model, report] = coin::train(proto.train_graph, cfg);
    coin::save_model(model, cfg, proto.train_graph.num_u, proto.train_graph.num_v,
                     ckpt_path(run, seed));
    coin::write_mi_csv(report, run.out + "/seed" + std::to_string(seed) + "_mi.csv");
    return report;
  };

  if (parallel_seeds && run.seeds.size() > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(run.seeds.size());
    std::vector<coin::TrainReport> reports(run.seeds.size());
    for (std::size_t i = 0; i < run.seeds.size(); ++i)
      workers.emplace_back([&, i] {
        coin::set_thread_override(1);  // one worker per seed, no nested pools
        try {
          reports[i] = run_one(run.seeds[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (std::size_t i = 0; i < run.seeds.size(); ++i) {
      const auto& last = reports[i].records.back();
      std::cout << "seed " << run.seeds[i] << ": epoch " << last.epoch << " mi=" << last.mi
                << " instance=" << last.instance << " total=" << last.total << " ("
                << reports[i].wall_seconds << "s)\n";
    }
  } else {
    for (std::uint64_t seed : run.seeds) {
      coin::TrainReport report = run_one(seed);
      const auto& last = report.records.back();
      std::cout << "seed " << seed << ": epoch " << last.epoch << " mi=" << last.mi
                << " instance=" << last.instance << " total=" << last.total << " ("
                << report.wall_seconds << "s)\n";
    }
  }
  std::cout << "checkpoints and MI curves written to " << run.out << "\n";
  return 0;
}

coin::Checkpoint load_checkpoint_checked(const std::string& path, const RunConfig& run,
                                         const coin::BipartiteGraph& graph) {
  coin::Checkpoint ck;
  try {
    ck = coin::load_model(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (ck.num_u != graph.num_u || ck.num_v != graph.num_v)
    throw ConfigError("checkpoint " + path + " was trained on |U|=" + std::to_string(ck.num_u) +
                      " |V|=" + std::to_string(ck.num_v) + ", data has |U|=" +
                      std::to_string(graph.num_u) + " |V|=" + std::to_string(graph.num_v));
  const coin::TrainConfig& a = ck.config;
  const coin::TrainConfig& b = run.train;
  if (a.d != b.d || a.layers != b.layers || a.n_k != b.n_k || a.n_l != b.n_l ||
      a.head_depth != b.head_depth)
    throw ConfigError("checkpoint " + path + " dimensions (d=" + std::to_string(a.d) +
                      ", layers=" + std::to_string(a.layers) + ", n_k=" + std::to_string(a.n_k) +
                      ", n_l=" + std::to_string(a.n_l) +
                      ") do not match the config (d=" + std::to_string(b.d) +
                      ", layers=" + std::to_string(b.layers) + ", n_k=" + std::to_string(b.n_k) +
                      ", n_l=" + std::to_string(b.n_l) + ")");
  return ck;
}

int cmd_eval(const std::string& config_path, const Overrides& ov, std::string task,
             std::vector<std::string> checkpoints, std::string out_file, bool deterministic) {
  RunConfig run = RunConfig::from_file(config_path);
  ov.apply(run);
  if (!task.empty()) {
    if (task != "link" && task != "rec" && task != "cluster")
      throw ConfigError("task must be link|rec|cluster, got \"" + task + "\"");
    run.task = task;
    // the full-graph default follows the task unless the config pinned it
    if (!run.use_full_graph_explicit) run.use_full_graph = run.task == "cluster";
  }
  if (deterministic) coin::set_thread_override(1);
  Protocol proto = build_protocol(run);
  if (run.task != "cluster" && proto.test_pos.empty())
    throw ConfigError("task \"" + run.task +
                      "\" evaluates held-out edges, but use_full_graph leaves none held out; "
                      "unset use_full_graph or provide test_pos_file");

  if (checkpoints.empty())
    for (std::uint64_t seed : run.seeds) checkpoints.push_back(ckpt_path(run, seed));
  if (proto.sampled_test_neg)
    std::cout << "sampled " << proto.test_neg.size() << " test negatives (no file provided)\n";
  if (proto.skipped_pairs > 0)
    std::cout << "skipped " << proto.skipped_pairs
              << " test pairs with ids outside the training vocabulary\n";

  coin::MetricsReport report;
  report.task = run.task;
  report.dataset = run.dataset;
  std::map<std::string, std::vector<double>> samples;

  for (const std::string& path : checkpoints) {
    coin::Checkpoint ck =
        load_checkpoint_checked(require_file(path, "checkpoint"), run, proto.train_graph);
    report.seeds.push_back(ck.config.seed);
    if (run.task == "link") {
      coin::LinkEvalOptions opts;
      opts.feature = coin::parse_feature_mode(run.feature);
      opts.l2 = run.link_l2;
      opts.iterations = run.link_iterations;
      opts.lr = run.link_lr;
      opts.seed = ck.config.seed;
      coin::DatasetSplit split;
      split.test_pos = proto.test_pos;
      split.test_neg = proto.test_neg;
      auto r = coin::evaluate_link(ck.model, proto.train_graph, proto.exclusion_graph, split, opts);
      samples["auc_roc"].push_back(r.auc_roc);
      samples["auc_pr"].push_back(r.auc_pr);
    } else if (run.task == "rec") {
      auto r = coin::evaluate_ranking(ck.model, proto.train_graph, proto.test_pos, run.ks,
                                      coin::parse_score_mode(run.scoring));
      for (const auto& [name, value] : r.metrics) samples[name].push_back(value);
      report.skipped_users = r.skipped_users;
    } else {
      std::string label_path = require_file(run.label_file, "label file");
      const coin::IdMap& ids =
          run.label_side == "u" ? proto.train_graph.u_ids : proto.train_graph.v_ids;
      coin::LabelSet labels = coin::load_label_file(label_path, ids);
      coin::NmiNorm norm = run.nmi_norm == "geometric" ? coin::NmiNorm::geometric
                                                       : coin::NmiNorm::arithmetic;
      double v = coin::evaluate_clustering(
          ck.model, proto.train_graph, labels,
          run.label_side == "u" ? coin::LabelSide::u : coin::LabelSide::v, norm);
      samples["nmi"].push_back(v);
    }
  }
  for (const auto& [name, xs] : samples) report.metrics[name] = coin::mean_std(xs);

  if (out_file.empty()) {
    fs::create_directories(run.out);
    out_file = run.out + "/metrics_" + run.task + ".json";
  }
  std::ofstream out(out_file);
  if (!out) throw std::runtime_error("cannot write metrics: " + out_file);
  out << report.to_json().dump(2) << "\n";
  std::cout << "task " << report.task << " on " << report.dataset << " ("
            << report.seeds.size() << " checkpoints):\n";
  for (const auto& [name, ms] : report.metrics)
    std::cout << "  " << name << " = " << ms.first << " +- " << ms.second << "\n";
  std::cout << "metrics written to " << out_file << "\n";
  return 0;
}

// The acceptance-gate toy: 6 users, 6 items, 2 clusters each, full objective.
int cmd_check_gradcheck(bool inject_error) {
  using namespace coin;
  auto graph = BipartiteGraph::from_edges(
      6, 6, {{0, 0}, {0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 2}, {3, 3}, {3, 4}, {4, 4}, {4, 5},
             {5, 3}, {5, 5}, {0, 3}, {4, 1}});
  TrainConfig cfg;
  cfg.d = 5;
  cfg.layers = 2;
  cfg.n_k = 2;
  cfg.n_l = 2;
  RngStream init_rng = RngStream::derive(17, "init");
  Model model = Model::init_model(graph.num_u, graph.num_v, cfg, init_rng);
  EdgePrior prior(graph);
  auto prior_mat = std::make_shared<SparseMatrix>(prior.matrix());
  RngStream neg_rng = RngStream::derive(17, "negatives");
  std::vector<std::uint32_t> negs;
  for (const auto& e : graph.edges) negs.push_back(sample_negatives(e.first, 1, graph, neg_rng)[0]);

  auto params_named = model.named_params();
  std::vector<Tensor> params;
  for (auto& [name, t] : params_named) params.push_back(*t);

  double max_rel = gradient_check(params, [&](Tape& tape, const std::vector<Var>& leaves) {
    std::size_t i = 0;
    Var u0 = leaves[i++], v0 = leaves[i++];
    EncoderVars enc;
    enc.leaky_slope = model.encoder.leaky_slope;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      enc.layers.push_back({leaves[i], leaves[i + 1], leaves[i + 2], leaves[i + 3]});
      i += 4;
    }
    ClusterHeadVars hu{{leaves[i]}, {leaves[i + 1]}};
    i += 2;
    ClusterHeadVars hv{{leaves[i]}, {leaves[i + 1]}};
    i += 2;
    ScorerVars scorer{leaves[i], leaves[i + 1]};
    EmbeddingVars emb = encode(tape, graph, enc, u0, v0);
    Var emb_u = emb.u;
    if (inject_error) {
      // deliberately wrong backward on an identity node (scales gradients)
      Tensor v = tape.value(emb_u);
      int id = tape.add_node("corrupted_identity", std::move(v), {emb_u.id},
                             [](Tape& t, int self) {
                               const Tensor& g = t.grad_of(self);
                               int p = t.parents1(self);
                               Tensor& gp = t.grad_acc(p);
                               for (std::size_t k = 0; k < g.numel(); ++k) gp[k] += 1.05 * g[k];
                             });
      emb_u = tape.wrap(id);
    }
    auto [pu, pv] = cluster_probs(tape, emb_u, emb.v, hu, hv);
    Var joint = co_cluster_joint(tape, pu, pv, prior_mat);
    Var mi = mutual_information(tape, joint);
    Var inst = instance_loss(tape, emb_u, emb.v, scorer, graph.edges, negs, cfg.loss_form);
    return tape.scale(total_objective(tape, mi, inst, 1.0), -1.0);
  });

  bool pass = max_rel < 1e-4;
  std::cout << "gradcheck: full objective on a 6x6 toy graph, " << params.size()
            << " parameter tensors, max relative error = " << max_rel
            << (pass ? " (PASS, tolerance 1e-4)\n" : " (FAIL, tolerance 1e-4)\n");
  return pass ? 0 : 1;
}

int cmd_check_theory() {
  using namespace coin;
  double max_residual = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    RngStream rng = RngStream::derive(1000, ("theory-" + std::to_string(inst)).c_str());
    std::size_t nu = 2 + rng.uniform_int(7), nv = 2 + rng.uniform_int(7);
    std::size_t nk = 2 + rng.uniform_int(nu - 1), nl = 2 + rng.uniform_int(nv - 1);
    Tensor puv(nu, nv);
    double mass = 0.0;
    for (std::size_t i = 0; i < puv.numel(); ++i) {
      puv[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();  // mixed support
      mass += puv[i];
    }
    if (mass == 0.0) {
      puv(0, 0) = 1.0;
      mass = 1.0;
    }
    for (std::size_t i = 0; i < puv.numel(); ++i) puv[i] /= mass;
    auto stochastic = [&rng](std::size_t r, std::size_t c) {
      Tensor t(r, c);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          t(i, j) = rng.uniform() + 1e-6;
          s += t(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) t(i, j) /= s;
      }
      return t;
    };
    MiDifference md = verify_mi_difference(puv, stochastic(nu, nk), stochastic(nv, nl));
    if (md.residual >= 1e-10 || md.i_kl > md.i_uv + 1e-12) {
      std::cout << "theory: instance " << inst << " FAILED: i_uv=" << md.i_uv
                << " i_kl=" << md.i_kl << " d_kl=" << md.d_kl << " residual=" << md.residual
                << "\n";
      return 1;
    }
    max_residual = std::max(max_residual, md.residual);
  }
  std::cout << "theory: 100 randomized instances, identity residual max = " << max_residual
            << " (PASS, tolerance 1e-10; i_kl <= i_uv in every instance)\n";
  return 0;
}

int cmd_export(const std::string& config_path, const std::string& checkpoint,
               std::string out_dir) {
  RunConfig run = RunConfig::from_file(config_path);
  Protocol proto = build_protocol(run);
  coin::Checkpoint ck =
      load_checkpoint_checked(require_file(checkpoint, "checkpoint"), run, proto.train_graph);
  if (proto.train_graph.u_ids.size() != proto.train_graph.num_u ||
      proto.train_graph.v_ids.size() != proto.train_graph.num_v)
    throw ConfigError("graph lacks id maps; cannot restore original ids");
  if (out_dir.empty()) out_dir = run.out;
  fs::create_directories(out_dir);

  coin::EmbeddingPair emb = coin::encode(proto.train_graph, ck.model.encoder, ck.model.init);
  auto write_tsv = [](const std::string& path, const coin::Tensor& m,
                      const std::vector<std::string>& names) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embeddings: " + path);
    out.precision(17);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      out << names[r];
      for (std::size_t c = 0; c < m.cols(); ++c) out << '\t' << m(r, c);
      out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
  };
  write_tsv(out_dir + "/u_embeddings.tsv", emb.u, proto.train_graph.u_ids.names);
  write_tsv(out_dir + "/v_embeddings.tsv", emb.v, proto.train_graph.v_ids.names);
  std::cout << "wrote " << out_dir << "/u_embeddings.tsv and v_embeddings.tsv (d="
            << emb.u.cols() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"co-cluster infomax embeddings for bipartite graphs"};
  app.require_subcommand(1);

  std::string config_path, task, out_file, checkpoint;
  std::vector<std::string> checkpoints;
  bool parallel_seeds = false, deterministic = false, inject_error = false;
  Overrides ov;

  CLI::App* tr = app.add_subcommand("train", "train one model per seed");
  tr->add_option("--config", config_path, "JSON run config")->required();
  ov.add_flags(tr);
  tr->add_flag("--parallel-seeds", parallel_seeds, "run seeds in parallel workers");
  tr->add_flag("--deterministic", deterministic, "single-threaded kernels, fixed reductions");

  CLI::App* ev = app.add_subcommand("eval", "evaluate checkpoints and aggregate mean/std");
  ev->add_option("--config", config_path, "JSON run config")->required();
  ev->add_option("--task", task, "override the config task: link|rec|cluster");
  ev->add_option("--checkpoints", checkpoints, "checkpoint files (default: one per config seed)");
  ev->add_option("--metrics-out", out_file, "metrics JSON path");
  ov.add_flags(ev);
  ev->add_flag("--deterministic", deterministic, "single-threaded kernels, fixed reductions");

  CLI::App* ck = app.add_subcommand("check", "numerical verification suites");
  std::string suite;
  ck->add_option("suite", suite, "gradcheck|theory")->required();
  ck->add_flag("--inject-error", inject_error, "corrupt one gradient path (must fail)");

  CLI::App* ex = app.add_subcommand("export", "write embeddings as TSV with original ids");
  ex->add_option("--config", config_path, "JSON run config")->required();
  ex->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ex->add_option("--out", out_file, "output directory (default: config out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (tr->parsed()) return cmd_train(config_path, ov, parallel_seeds, deterministic);
    if (ev->parsed()) return cmd_eval(config_path, ov, task, checkpoints, out_file, deterministic);
    if (ck->parsed()) {
      if (suite == "gradcheck") return cmd_check_gradcheck(inject_error);
      if (suite == "theory") return cmd_check_theory();
      throw ConfigError("unknown check suite: " + suite + " (want gradcheck|theory)");
    }
    if (ex->parsed()) return cmd_export(config_path, checkpoint, out_file);
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
