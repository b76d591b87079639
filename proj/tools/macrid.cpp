// Copyright 2026 The Macrid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// macrid: command-line entry point.
//   prep    ratings file -> corpus directory with a held-out split
//   train   fit a model, one JSON line per epoch on stdout
//   search  random hyperparameter search
//   eval    ranking metrics on the validation or test users
//   sweep   (beta, sigma0) grid -> CSV of NDCG@100 and independence
//   control monotone item trajectory along one dimension
//   export  item and user embeddings for external plotting
//   serve   read-only JSON API

#include <chrono>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "macrid/control.hpp"
#include "macrid/corpus.hpp"
#include "macrid/metrics.hpp"
#include "macrid/parallel.hpp"
#include "macrid/service.hpp"
#include "macrid/trainer.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::uint64_t seed = 0;
  bool quiet = false;
  std::string json_path;  // "-" for stdout
  bool json_set = false;
};

// String-typed flags whose parsed form lives in TrainConfig.
struct TrainFlags {
  macrid::TrainConfig cfg;
  std::string neg_samples = "auto";
  std::string similarity = "cosine";
  std::string adaptive_k = "off";
  std::string corpus;

  macrid::TrainConfig resolve(std::uint64_t seed) {
    macrid::TrainConfig c = cfg;
    c.seed = seed;
    if (neg_samples == "auto") {
      c.hp.neg_samples = macrid::kAutoNegatives;
    } else if (neg_samples == "full") {
      c.hp.neg_samples = 0;
    } else {
      try {
        c.hp.neg_samples = std::stoul(neg_samples);
      } catch (const std::exception&) {
        macrid::fail(macrid::ErrorKind::kUsage, "--neg-samples expects auto, full or a count");
      }
    }
    c.hp.similarity = macrid::similarity_from_string(similarity);
    if (adaptive_k != "off") {
      try {
        c.adaptive_k = std::stod(adaptive_k);
      } catch (const std::exception&) {
        macrid::fail(macrid::ErrorKind::kUsage, "--adaptive-k expects off or a threshold");
      }
    }
    c.validate();
    return c;
  }
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  auto& hp = f.cfg.hp;
  sub->add_option("--config", "TOML file of flag values (command line wins)");
  sub->add_option("--corpus", f.corpus, "Corpus directory written by prep")->required();
  sub->add_option("--k", hp.k, "Number of concepts");
  sub->add_option("--d", hp.d, "Dimension per concept");
  sub->add_option("--beta", hp.beta, "KL weight");
  sub->add_option("--sigma0", hp.sigma0, "Prior deviation");
  sub->add_option("--tau", hp.tau, "Cosine temperature");
  sub->add_option("--lambda", hp.gumbel_temp, "Gumbel-softmax temperature");
  sub->add_option("--lr", hp.lr, "Adam learning rate");
  sub->add_option("--l2", hp.l2_reg, "L2 weight");
  sub->add_option("--dropout", hp.dropout_rate, "Encoder input dropout rate");
  sub->add_option("--layers", hp.hidden_layers, "Hidden tanh layers in the encoder");
  sub->add_option("--width", hp.hidden_width, "Hidden layer width");
  sub->add_option("--epochs", f.cfg.epochs, "Maximum epochs");
  sub->add_option("--batch", f.cfg.batch_size, "Users per minibatch");
  sub->add_option("--patience", f.cfg.patience, "Epochs without validation gain before stopping");
  sub->add_option("--neg-samples", f.neg_samples, "auto, full or a count");
  sub->add_option("--similarity", f.similarity, "cosine or inner")
      ->check(CLI::IsMember({"cosine", "inner"}));
  sub->add_option("--adaptive-k", f.adaptive_k, "off or a JS divergence threshold");
}

// "# macrid <sub> --flag value ..." from the resolved option values.
std::string header(const CLI::App& app, const CLI::App& sub) {
  std::ostringstream out;
  out << "# macrid";
  const auto emit = [&](const CLI::App& a) {
    for (const CLI::Option* o : a.get_options()) {
      const std::string name = o->get_name(false, false);
      if (name.rfind("--", 0) != 0 || name == "--help" || name == "--config" ||
          name == "--help-all") {
        continue;
      }
      if (o->get_expected_max() == 0) {
        if (o->count() > 0) out << ' ' << name;
        continue;
      }
      std::string value;
      if (o->count() > 0) {
        for (const auto& r : o->results()) value += (value.empty() ? "" : " ") + r;
      } else {
        value = o->get_default_str();
      }
      if (value.empty()) continue;
      out << ' ' << name << ' ' << (value.find(' ') == std::string::npos ? value : '"' + value + '"');
    }
  };
  emit(app);
  out << ' ' << sub.get_name();
  emit(sub);
  return out.str();
}

class Output {
 public:
  explicit Output(const Globals& g) : g_(g) {}

  void note(const std::string& s) const {
    if (!g_.quiet) std::cerr << s << '\n';
  }
  bool json_mode() const { return g_.json_set; }
  // Writes the JSON document to the --json target.
  void emit(const json& j) const {
    if (g_.json_path.empty() || g_.json_path == "-") {
      std::cout << j.dump(2) << '\n';
      return;
    }
    std::ofstream f(g_.json_path);
    if (!f) macrid::fail(macrid::ErrorKind::kIo, "cannot write " + g_.json_path);
    f << j.dump(2) << '\n';
  }

 private:
  const Globals& g_;
};

std::string fixed(double v, int digits = 5) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

json summary_json(const macrid::MetricSummary& m) { return {{"mean", m.mean}, {"se", m.se}}; }

macrid::Checkpoint read_ckpt(const std::string& path) {
  if (!fs::exists(path)) macrid::fail(macrid::ErrorKind::kData, "checkpoint not found: " + path);
  return macrid::load_checkpoint(path);
}

void require_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) macrid::fail(macrid::ErrorKind::kData, "corpus directory not found: " + dir);
}

void check_items(const macrid::Checkpoint& ck, const macrid::InteractionMatrix& m) {
  if (!(ck.items == m.item_vocab())) {
    macrid::fail(macrid::ErrorKind::kData, "checkpoint item vocabulary does not match the corpus");
  }
}

// Items used to encode each user: fold-in for held-out users, else the row.
std::vector<std::vector<macrid::Index>> encoding_rows(const macrid::InteractionMatrix& m,
                                                      const macrid::SplitSpec& split) {
  std::vector<std::vector<macrid::Index>> rows;
  for (std::size_t u = 0; u < m.n_users(); ++u) {
    const auto it = split.foldin.find(static_cast<macrid::Index>(u));
    rows.push_back(it != split.foldin.end() ? it->second : m.row_vector(u));
  }
  return rows;
}

std::vector<std::vector<macrid::Index>> foldin_rows(const macrid::SplitSpec& split,
                                                    macrid::SplitPart part) {
  const auto& users =
      part == macrid::SplitPart::kTest ? split.test_users : split.validation_users;
  std::vector<std::vector<macrid::Index>> rows;
  for (auto u : users) {
    const auto& f = split.foldin.at(u);
    if (!f.empty()) rows.push_back(f);
  }
  return rows;
}

struct IndependenceFlags {
  std::string representation = "mean";
  bool per_concept = false;

  void add(CLI::App* sub) {
    sub->add_option("--representation", representation, "User codes scored for independence")
        ->check(CLI::IsMember({"mean", "sample"}));
    sub->add_flag("--per-concept", per_concept, "Average per-concept scores instead of K*d columns");
  }

  double score(const macrid::ModelParams& p, const std::vector<std::vector<macrid::Index>>& rows,
               std::uint64_t seed) const {
    const auto rep = macrid::representation_from_string(representation);
    const std::span<const std::vector<macrid::Index>> r(rows);
    if (!per_concept) return macrid::independence(macrid::user_codes(p, r, rep, seed)).value;
    double total = 0.0;
    for (std::size_t k = 0; k < p.k(); ++k)
      total += macrid::independence(macrid::user_codes(p, r, rep, seed, k)).value;
    return total / static_cast<double>(p.k());
  }
};

void report_budget(const Output& out, const macrid::ModelParams& p) {
  if (macrid::over_parameter_budget(p)) {
    std::cerr << "warning: " << p.parameter_count() << " parameters exceed 1.1 x 2Md = "
              << static_cast<std::size_t>(2.2 * p.m() * p.d()) << '\n';
  } else {
    out.note("parameters: " + std::to_string(p.parameter_count()));
  }
}

// Splices the entries of a --config TOML file in as flags right after the
// subcommand, so later command-line flags take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) macrid::fail(macrid::ErrorKind::kData, "config file not found: " + path);
  std::vector<std::string> flags;
  for (const auto& item : CLI::ConfigTOML().from_config(in)) {
    if (!item.parents.empty() || item.name == "++" || item.name == "--") continue;
    flags.push_back("--" + item.name);
    flags.insert(flags.end(), item.inputs.begin(), item.inputs.end());
  }
  static const std::set<std::string> subs{"prep", "train", "search", "eval",
                                          "sweep", "control", "export", "serve"};
  auto at = std::find_if(args.begin() + 1, args.end(), [](const auto& a) { return subs.count(a) > 0; });
  if (at == args.end()) macrid::fail(macrid::ErrorKind::kUsage, "--config needs a subcommand");
  args.insert(at + 1, flags.begin(), flags.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangled variational recommender", "macrid"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_flag("--quiet", g.quiet, "Suppress progress output on stderr");
  app.add_option("--json", g.json_path, "Emit JSON (to stdout, or to the given file)")
      ->expected(0, 1)
      ->default_str("");

  // prep
  std::string prep_input, prep_out;
  macrid::LoadOptions load_opts;
  std::size_t heldout = 100;
  double foldin = 0.8;
  auto* prep = app.add_subcommand("prep", "Binarize and split a ratings file");
  prep->add_option("--input", prep_input, "Ratings file (userId, itemId, rating[, timestamp])")
      ->required();
  prep->add_option("--threshold", load_opts.rating_threshold, "Keep ratings >= threshold");
  prep->add_option("--min-items", load_opts.min_items_per_user, "Drop users with fewer items");
  prep->add_option("--heldout", heldout, "Held-out users (half validation, half test)");
  prep->add_option("--foldin", foldin, "Fraction of each held-out row used for fold-in");
  prep->add_option("--out", prep_out, "Output corpus directory")->required();

  // train
  TrainFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train a model");
  add_train_flags(train, train_flags);
  train->add_option("--out", train_out, "Checkpoint path")->required();

  // search
  TrainFlags search_flags;
  std::size_t trials = 50;
  std::string search_out, search_config;
  auto* search = app.add_subcommand("search", "Random hyperparameter search");
  add_train_flags(search, search_flags);
  search->add_option("--trials", trials, "Number of sampled configurations");
  search->add_option("--out", search_out, "Checkpoint of the best trial")->required();
  search->add_option("--save-config", search_config, "Write the best flags as a TOML config");

  // eval
  std::string eval_ckpt, eval_corpus, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Ranking metrics on held-out users");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--corpus", eval_corpus, "Corpus directory")->required();
  eval->add_option("--split", eval_split, "validation or test")
      ->check(CLI::IsMember({"validation", "test"}));
  IndependenceFlags eval_ind;
  eval_ind.add(eval);

  // sweep
  TrainFlags sweep_flags;
  std::vector<std::string> grid{"beta=0,1,10,50", "sigma0=0.1,0.2,0.3"};
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Train over a beta x sigma0 grid");
  add_train_flags(sweep, sweep_flags);
  sweep->add_option("--grid", grid, "name=v1,v2,... for beta and sigma0");
  sweep->add_option("--out", sweep_out, "CSV output")->required();
  IndependenceFlags sweep_ind;
  sweep_ind.add(sweep);

  // control
  std::string ctl_ckpt, ctl_corpus, ctl_item, ctl_user;
  std::size_t ctl_k = 0;
  macrid::ControlQuery q;
  double ctl_value = std::numeric_limits<double>::quiet_NaN();
  auto* control = app.add_subcommand("control", "Monotone trajectory along one dimension");
  control->add_option("--ckpt", ctl_ckpt, "Checkpoint")->required();
  control->add_option("--corpus", ctl_corpus, "Corpus directory (needed with --user)");
  auto* item_opt = control->add_option("--item", ctl_item, "Anchor item id");
  auto* user_opt = control->add_option("--user", ctl_user, "Anchor user id");
  item_opt->excludes(user_opt);
  control->add_option("--k", ctl_k, "Concept of the user anchor");
  control->add_option("--dim", q.dim, "Dimension to vary")->required();
  control->add_option("--b", q.b, "Trajectory length");
  control->add_option("--gamma", q.gamma, "Pairwise coherence weight");
  control->add_option("--beam", q.beam_width, "Beam width");
  control->add_option("--value", ctl_value, "Slider position; reported as its bin");

  // export
  std::string exp_ckpt, exp_corpus, exp_out;
  auto* exporter = app.add_subcommand("export", "Write item and user embeddings");
  exporter->add_option("--ckpt", exp_ckpt, "Checkpoint")->required();
  exporter->add_option("--corpus", exp_corpus, "Corpus directory")->required();
  exporter->add_option("--out", exp_out, "Output TSV")->required();

  // serve
  std::string srv_ckpt, srv_corpus, srv_host = "127.0.0.1";
  int port = 7700;
  auto* serve = app.add_subcommand("serve", "Serve the JSON API");
  serve->add_option("--ckpt", srv_ckpt, "Checkpoint")->required();
  serve->add_option("--corpus", srv_corpus, "Corpus directory (enables user endpoints)");
  serve->add_option("--host", srv_host, "Bind address");
  serve->add_option("--port", port, "Port");

  try {
    auto args = expand_config(argc, argv);
    args.erase(args.begin());
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const macrid::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == macrid::ErrorKind::kData ? kExitData : kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  g.json_set = app.get_option("--json")->count() > 0;
  if (g.json_set && g.json_path.empty()) g.json_path = "-";

  const CLI::App* sub = app.get_subcommands().front();
  const Output out(g);
  if (!g.quiet) std::cerr << header(app, *sub) << '\n';

  try {
    if (sub == prep) {
      auto m = macrid::load_ratings(prep_input, load_opts);
      const auto split = macrid::make_split(m, heldout, foldin, g.seed);
      macrid::save_corpus_dir(prep_out, m, &split);
      const double density =
          static_cast<double>(m.nnz()) / (static_cast<double>(m.n_users()) * m.n_items());
      const json j = {{"users", m.n_users()},
                      {"items", m.n_items()},
                      {"interactions", m.nnz()},
                      {"density", density},
                      {"train_users", split.train_users.size()},
                      {"validation_users", split.validation_users.size()},
                      {"test_users", split.test_users.size()}};
      if (out.json_mode()) {
        out.emit(j);
      } else {
        std::cout << "users " << m.n_users() << "  items " << m.n_items() << "  interactions "
                  << m.nnz() << "  density " << fixed(density * 100.0, 3) << "%\n"
                  << "split train " << split.train_users.size() << "  validation "
                  << split.validation_users.size() << "  test " << split.test_users.size()
                  << '\n';
      }
    } else if (sub == train) {
      const auto cfg_resolved = [&] {
        auto c = train_flags.resolve(g.seed);
        c.checkpoint_path = train_out;
        return c;
      }();
      require_dir(train_flags.corpus);
      const auto m = macrid::load_corpus_dir(train_flags.corpus);
      const auto split = macrid::load_split(train_flags.corpus);
      const auto result = macrid::train(
          m, split, cfg_resolved, [&](const macrid::EpochReport& e, const macrid::ModelParams&) {
            std::cout << macrid::to_json(e) << std::endl;
          });
      report_budget(out, result.params);
      const json j = {{"best_epoch", result.report.best_epoch},
                      {"best_val_ndcg100", result.report.best_ndcg},
                      {"epochs", result.report.epochs.size()},
                      {"seconds", result.report.seconds},
                      {"parameters", result.report.parameter_count},
                      {"checkpoint", train_out}};
      if (out.json_mode()) {
        out.emit(j);
      } else {
        out.note("best epoch " + std::to_string(result.report.best_epoch) + "  val NDCG@100 " +
                 fixed(result.report.best_ndcg) + "  -> " + train_out);
      }
    } else if (sub == search) {
      auto base = search_flags.resolve(g.seed);
      require_dir(search_flags.corpus);
      const auto m = macrid::load_corpus_dir(search_flags.corpus);
      const auto split = macrid::load_split(search_flags.corpus);
      std::size_t n = 0;
      const auto res = macrid::random_search(m, split, trials, g.seed, base,
                                             [&](const macrid::SearchTrial& t) {
                                               json line = {{"trial", ++n},
                                                            {"val_ndcg100", t.val_ndcg},
                                                            {"best_epoch", t.best_epoch},
                                                            {"hp", json::parse(macrid::to_json(t.config.hp))}};
                                               if (!t.error.empty()) line["error"] = t.error;
                                               std::cout << line.dump() << std::endl;
                                             });
      macrid::save_checkpoint(search_out, res.best_result.params, m.item_vocab());
      const auto& hp = res.best.hp;
      if (!search_config.empty()) {
        std::ofstream f(search_config);
        if (!f) macrid::fail(macrid::ErrorKind::kIo, "cannot write " + search_config);
        f << std::setprecision(17) << "k = " << hp.k << "\nd = " << hp.d << "\nbeta = " << hp.beta
          << "\nsigma0 = " << hp.sigma0 << "\ntau = " << hp.tau << "\nlambda = " << hp.gumbel_temp
          << "\nlr = " << hp.lr << "\nl2 = " << hp.l2_reg << "\ndropout = " << hp.dropout_rate
          << "\nlayers = " << hp.hidden_layers << "\nwidth = " << hp.hidden_width
          << "\nepochs = " << res.best.epochs << "\nbatch = " << res.best.batch_size
          << "\npatience = " << res.best.patience << "\nsimilarity = \""
          << macrid::to_string(hp.similarity) << "\"\n";
      }
      const json j = {{"best_val_ndcg100", res.best_result.report.best_ndcg},
                      {"hp", json::parse(macrid::to_json(hp))},
                      {"checkpoint", search_out}};
      if (out.json_mode()) {
        out.emit(j);
      } else {
        out.note("best val NDCG@100 " + fixed(res.best_result.report.best_ndcg) + "  " +
                 macrid::to_json(hp));
      }
    } else if (sub == eval) {
      const auto ck = read_ckpt(eval_ckpt);
      require_dir(eval_corpus);
      const auto m = macrid::load_corpus_dir(eval_corpus);
      check_items(ck, m);
      const auto split = macrid::load_split(eval_corpus);
      const auto part = macrid::split_part_from_string(eval_split);
      const auto r = macrid::evaluate(ck.params, split, part);
      const double ind = eval_ind.score(ck.params, foldin_rows(split, part), g.seed);
      const json j = {{"split", eval_split},
                      {"users", r.per_user.size()},
                      {"skipped", r.skipped},
                      {"ndcg100", summary_json(r.ndcg100)},
                      {"recall20", summary_json(r.recall20)},
                      {"recall50", summary_json(r.recall50)},
                      {"independence", ind}};
      if (out.json_mode()) {
        out.emit(j);
      } else {
        std::cout << "split " << eval_split << " (" << r.per_user.size() << " users)\n"
                  << "NDCG@100   " << fixed(r.ndcg100.mean) << " +/- " << fixed(r.ndcg100.se) << '\n'
                  << "Recall@20  " << fixed(r.recall20.mean) << " +/- " << fixed(r.recall20.se) << '\n'
                  << "Recall@50  " << fixed(r.recall50.mean) << " +/- " << fixed(r.recall50.se) << '\n'
                  << "independence " << fixed(ind) << '\n';
      }
    } else if (sub == sweep) {
      std::map<std::string, std::vector<double>> axes{{"beta", {}}, {"sigma0", {}}};
      for (const auto& spec : grid) {
        const auto eq = spec.find('=');
        const std::string name = spec.substr(0, eq);
        if (eq == std::string::npos || !axes.count(name)) {
          macrid::fail(macrid::ErrorKind::kUsage, "--grid expects beta=... or sigma0=..., got " + spec);
        }
        std::stringstream vs(spec.substr(eq + 1));
        for (std::string v; std::getline(vs, v, ',');) {
          try {
            axes[name].push_back(std::stod(v));
          } catch (const std::exception&) {
            macrid::fail(macrid::ErrorKind::kUsage, "bad grid value '" + v + "'");
          }
        }
      }
      auto base = sweep_flags.resolve(g.seed);
      if (axes["beta"].empty()) axes["beta"].push_back(base.hp.beta);
      if (axes["sigma0"].empty()) axes["sigma0"].push_back(base.hp.sigma0);
      require_dir(sweep_flags.corpus);
      const auto m = macrid::load_corpus_dir(sweep_flags.corpus);
      const auto split = macrid::load_split(sweep_flags.corpus);
      const auto rows = foldin_rows(split, macrid::SplitPart::kTest);
      std::ofstream csv(sweep_out);
      if (!csv) macrid::fail(macrid::ErrorKind::kIo, "cannot write " + sweep_out);
      csv << "beta,sigma0,best_epoch,val_ndcg100,test_ndcg100,independence\n";
      json points = json::array();
      for (double beta : axes["beta"]) {
        for (double s0 : axes["sigma0"]) {
          auto cfg = base;
          cfg.hp.beta = beta;
          cfg.hp.sigma0 = s0;
          const auto r = macrid::train(m, split, cfg);
          const auto test = macrid::evaluate(r.params, split, macrid::SplitPart::kTest);
          const double ind = sweep_ind.score(r.params, rows, g.seed);
          csv << std::setprecision(10) << beta << ',' << s0 << ',' << r.report.best_epoch << ','
              << r.report.best_ndcg << ',' << test.ndcg100.mean << ',' << ind << '\n';
          points.push_back({{"beta", beta},
                            {"sigma0", s0},
                            {"best_epoch", r.report.best_epoch},
                            {"val_ndcg100", r.report.best_ndcg},
                            {"test_ndcg100", test.ndcg100.mean},
                            {"independence", ind}});
          out.note("beta " + fixed(beta, 3) + "  sigma0 " + fixed(s0, 3) + "  NDCG@100 " +
                   fixed(test.ndcg100.mean) + "  independence " + fixed(ind));
        }
      }
      if (out.json_mode()) out.emit(points);
    } else if (sub == control) {
      const auto ck = read_ckpt(ctl_ckpt);
      if (item_opt->count() > 0) {
        const auto item = ck.items.find(ctl_item);
        if (!item) macrid::fail(macrid::ErrorKind::kUsage, "unknown item '" + ctl_item + "'");
        q.anchor = macrid::item_anchor(ck.params, *item);
      } else if (user_opt->count() > 0) {
        if (ctl_corpus.empty()) macrid::fail(macrid::ErrorKind::kUsage, "--user needs --corpus");
        require_dir(ctl_corpus);
        const auto m = macrid::load_corpus_dir(ctl_corpus);
        check_items(ck, m);
        const auto user = m.user_vocab().find(ctl_user);
        if (!user) macrid::fail(macrid::ErrorKind::kUsage, "unknown user '" + ctl_user + "'");
        const auto rows = encoding_rows(m, macrid::load_split(ctl_corpus));
        q.anchor = macrid::user_anchor(ck.params, rows[*user], ctl_k);
      } else {
        macrid::fail(macrid::ErrorKind::kUsage, "one of --item or --user is required");
      }
      if (!std::isnan(ctl_value)) q.value = ctl_value;
      const auto t = macrid::select_trajectory(q, ck.params);
      if (out.json_mode()) {
        json items = json::array();
        for (std::size_t i = 0; i < t.items.size(); ++i)
          items.push_back({{"id", ck.items.id(t.items[i])}, {"dim_value", t.dim_values[i]}});
        json j = {{"items", items},
                  {"boundaries", t.boundaries},
                  {"objective", t.objective},
                  {"k_star", t.probe.k_star},
                  {"range", {t.probe.lower, t.probe.upper}},
                  {"eligible", t.eligible}};
        j["value_bin"] = t.value_bin ? json(*t.value_bin) : json(nullptr);
        out.emit(j);
      } else {
        std::cout << "concept " << t.probe.k_star << "  range (" << fixed(t.probe.lower) << ", "
                  << fixed(t.probe.upper) << ")  eligible " << t.eligible << "  objective "
                  << fixed(t.objective) << '\n';
        for (std::size_t i = 0; i < t.items.size(); ++i) {
          std::cout << std::setw(3) << i << "  " << std::setw(12) << fixed(t.dim_values[i])
                    << "  " << ck.items.id(t.items[i])
                    << (t.value_bin && *t.value_bin == i ? "  <" : "") << '\n';
        }
      }
    } else if (sub == exporter) {
      const auto ck = read_ckpt(exp_ckpt);
      require_dir(exp_corpus);
      const auto m = macrid::load_corpus_dir(exp_corpus);
      check_items(ck, m);
      const auto rows = encoding_rows(m, macrid::load_split(exp_corpus));
      std::vector<macrid::ExportedUser> users;
      for (std::size_t u = 0; u < rows.size(); ++u)
        users.push_back({m.user_vocab().id(static_cast<macrid::Index>(u)), rows[u]});
      macrid::export_embeddings(exp_out, ck.params, macrid::infer_assignment(ck.params), ck.items,
                                users);
      if (out.json_mode()) {
        out.emit({{"items", ck.params.m()}, {"users", users.size()}, {"path", exp_out}});
      } else {
        out.note("wrote " + std::to_string(ck.params.m()) + " items and " +
                 std::to_string(users.size()) + " users to " + exp_out);
      }
    } else if (sub == serve) {
      if (!fs::exists(srv_ckpt)) macrid::fail(macrid::ErrorKind::kData, "checkpoint not found: " + srv_ckpt);
      if (!srv_corpus.empty()) require_dir(srv_corpus);
      macrid::Service service;
      httplib::Server server;
      macrid::mount(server, service);
      if (!server.bind_to_port(srv_host, port)) {
        macrid::fail(macrid::ErrorKind::kIo, "cannot bind " + srv_host + ":" + std::to_string(port));
      }
      std::thread loader([&] {
        try {
          auto ck = macrid::load_checkpoint(srv_ckpt);
          if (srv_corpus.empty()) {
            service.install(macrid::ServiceState::build(std::move(ck)));
          } else {
            const auto m = macrid::load_corpus_dir(srv_corpus);
            check_items(ck, m);
            const auto split = macrid::load_split(srv_corpus);
            service.install(macrid::ServiceState::build(std::move(ck), &m, &split));
          }
          out.note("serving on http://" + srv_host + ":" + std::to_string(port));
        } catch (const std::exception& e) {
          std::cerr << "error: " << e.what() << '\n';
          server.stop();
        }
      });
      server.listen_after_bind();
      loader.join();
      if (!service.ready()) return kExitData;
    }
  } catch (const macrid::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const macrid::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case macrid::ErrorKind::kData:
      case macrid::ErrorKind::kIo:
        return kExitData;
      case macrid::ErrorKind::kNumeric:
        return kExitNumeric;
      default:
        return kExitUsage;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
