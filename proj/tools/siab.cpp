// siab: synthetic data generation, training, evaluation and diagnostics.
//
// Every failure is reported as one line on stderr,
//   error: <kind>: <message>
// with exit code 2 (invalid input), 3 (unreadable file), 4 (numeric) or 1.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "siab/checkpoint.hpp"
#include "siab/config.hpp"
#include "siab/data.hpp"
#include "siab/error.hpp"
#include "siab/log.hpp"
#include "siab/metrics.hpp"
#include "siab/plot.hpp"
#include "siab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace siab;

namespace {

// ------------------------------------------------------------------ helpers

std::string flag_name(const std::string& key) {
  std::string flag = key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  return flag;
}

// Registers --<key> (and the underscore spelling) for every config key.
std::map<std::string, std::string>& add_config_flags(CLI::App* cmd, std::map<std::string, std::string>& values) {
  for (const auto& key : config_keys()) {
    const std::string flag = flag_name(key.name);
    std::string names = "--" + flag;
    if (flag != key.name) names += ",--" + key.name;
    cmd->add_option(names, values[key.name], key.help)->group("Config overrides");
  }
  return values;
}

void apply_overrides(TrainConfig& cfg, CLI::App* cmd, const std::map<std::string, std::string>& values) {
  for (const auto& key : config_keys()) {
    if (cmd->count("--" + flag_name(key.name)) > 0) cfg.set(key.name, values.at(key.name));
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> domain_names(const DatasetRegistry& reg) {
  std::vector<std::string> names;
  for (const auto& d : reg.domains()) names.push_back(d.name);
  return names;
}

// Default plot directory: <run>/plots for checkpoints inside a run, else ./plots.
fs::path default_plot_dir(const fs::path& checkpoint) {
  const fs::path parent = checkpoint.parent_path();
  if (parent.filename() == "checkpoints") return parent.parent_path() / "plots";
  return "plots";
}

TrainConfig config_from_metadata(const json& metadata) {
  if (metadata.contains("config")) return TrainConfig::parse(metadata["config"].get<std::string>());
  return TrainConfig{};
}

// ----------------------------------------------------------------- generate

struct GenerateArgs {
  fs::path out;
  int domains = 4;
  int n = 200;
  int size = 64;
  int classes = 2;
  std::uint64_t seed = 7;
};

int cmd_generate(const GenerateArgs& a) {
  if (a.domains < 3) {
    throw InvalidInput("--domains must be at least 3 (two source domains plus one unseen), got " +
                       std::to_string(a.domains));
  }
  if (a.n < 1) throw InvalidInput("--n must be positive");
  SyntheticDomainSpec spec;
  spec.image_size = a.size;
  spec.n_classes = a.classes;
  spec.seed = a.seed;
  const DatasetRegistry reg = make_synthetic_registry(spec, a.domains, a.n);
  save_registry(reg, a.out);
  std::printf("wrote %d domains x %d samples (%dx%d, %d classes) to %s\n", a.domains, a.n, a.size, a.size, a.classes,
              a.out.string().c_str());
  return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  fs::path data;
  fs::path config;
  std::string name;
  fs::path runs_dir = "runs";
  fs::path resume;
  std::map<std::string, std::string> overrides;
};

struct RunPaths {
  fs::path root;
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path history() const { return root / "history.jsonl"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path plots() const { return root / "plots"; }
};

json checkpoint_metadata(const TrainConfig& cfg, const std::string& role, long iteration,
                         const DatasetRegistry& train, const std::string& unseen_name) {
  return {{"role", role},
          {"iteration", iteration},
          {"config", cfg.to_text()},
          {"config_hash", cfg.hash()},
          {"unseen", cfg.unseen},
          {"unseen_name", unseen_name},
          {"domain_names", domain_names(train)}};
}

void save_state(const RunPaths& run, TrainState& state, const TrainConfig& cfg, const DatasetRegistry& train,
                const std::string& unseen_name) {
  const fs::path dir = run.checkpoints();
  save_checkpoint(state.pair.student, dir / "student.ckpt",
                  checkpoint_metadata(cfg, "student", state.iteration, train, unseen_name));
  save_checkpoint(state.pair.teacher, dir / "teacher.ckpt",
                  checkpoint_metadata(cfg, "teacher", state.iteration, train, unseen_name));
  Archive opt = state.optimizer.to_archive();
  opt.header["iteration"] = state.iteration;
  write_archive(dir / "optimizer.state", opt);
}

// Drops history lines recorded after `iteration` (a run interrupted between
// checkpoints), so a resumed run does not duplicate them.
void truncate_history(const fs::path& path, long iteration) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> kept;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (json::parse(line).at("iteration").get<long>() <= iteration) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : kept) out << line << '\n';
}

int cmd_train(TrainArgs& a, CLI::App* cmd, const std::vector<std::string>& argv) {
  TrainConfig cfg;
  std::optional<TrainState> resume;
  RunPaths run;
  json previous;
  if (!a.resume.empty()) {
    run.root = a.resume;
    previous = read_json(run.manifest());
    cfg = TrainConfig::parse(previous.at("config_text").get<std::string>());
    if (a.data.empty()) a.data = previous.at("data").at("root").get<std::string>();
  } else if (!a.config.empty()) {
    cfg = TrainConfig::load(a.config);
  }
  apply_overrides(cfg, cmd, a.overrides);
  cfg.validate();
  if (a.data.empty()) throw InvalidInput("--data is required");

  const DatasetRegistry all = load_registry(a.data);
  if (cfg.unseen < 1 || cfg.unseen > all.n_domains()) {
    throw InvalidInput("unseen domain " + std::to_string(cfg.unseen) + " outside [1, " +
                       std::to_string(all.n_domains()) + "]");
  }
  const LeaveOneOut loo = leave_one_out(all, DomainId{cfg.unseen});
  const DatasetRegistry train = split_labeled_unlabeled(loo.train, cfg.labeled_fraction, cfg.seed);
  const std::string unseen_name = all.domain(DomainId{cfg.unseen}).name;

  if (!a.resume.empty()) {
    const int k = train.n_domains();
    auto student = load_checkpoint(run.checkpoints() / "student.ckpt", cfg.use_siab ? std::optional<int>(k) : std::nullopt);
    auto teacher = load_checkpoint(run.checkpoints() / "teacher.ckpt", cfg.use_siab ? std::optional<int>(k) : std::nullopt);
    const Archive opt = read_archive(run.checkpoints() / "optimizer.state");
    const long iteration = student.metadata.at("iteration").get<long>();
    if (teacher.metadata.at("iteration").get<long>() != iteration || opt.header.at("iteration").get<long>() != iteration) {
      throw LoadError("checkpoint key 'iteration': student, teacher and optimizer disagree");
    }
    AdamWOptions o;
    o.lr = cfg.lr;
    o.weight_decay = cfg.weight_decay;
    o.mixing_lr_multiplier = cfg.alpha_lr_multiplier;
    resume = TrainState{{std::move(student.net), std::move(teacher.net)}, AdamW::from_archive(opt, o), iteration};
    truncate_history(run.history(), iteration);
    std::printf("resuming %s at iteration %ld\n", run.root.string().c_str(), iteration);
  } else {
    run.root = a.runs_dir / (a.name.empty() ? "run-" + cfg.hash().substr(0, 8) : a.name);
    if (fs::exists(run.manifest())) {
      throw InvalidInput("run directory " + run.root.string() + " already exists; use --resume or another --name");
    }
  }
  fs::create_directories(run.checkpoints());
  fs::create_directories(run.plots());

  json manifest{{"format", "siab-run"},
                {"version", 1},
                {"config", cfg.to_json()},
                {"config_text", cfg.to_text()},
                {"config_hash", cfg.hash()},
                {"seed", cfg.seed},
                {"command", argv}};
  json domains = json::array();
  for (const auto& d : all.domains()) domains.push_back({{"name", d.name}, {"samples", d.labeled.size() + d.unlabeled.size()}});
  manifest["data"] = {{"root", fs::absolute(a.data).string()},
                      {"n_classes", all.n_classes()},
                      {"domains", domains},
                      {"unseen", {{"id", cfg.unseen}, {"name", unseen_name}}},
                      {"labeled_per_source", [&] {
                         json j = json::array();
                         for (const auto& d : train.domains()) j.push_back(d.labeled.size());
                         return j;
                       }()}};
  manifest["layout"] = {{"history", "history.jsonl"},
                        {"checkpoints", {"checkpoints/student.ckpt", "checkpoints/teacher.ckpt",
                                         "checkpoints/inference.ckpt", "checkpoints/optimizer.state"}},
                        {"plots", "plots/"}};
  if (resume) manifest["resumed_from_iteration"] = resume->iteration;
  write_json(run.manifest(), manifest);

  std::ofstream history(run.history(), std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_record = [&](const HistoryRecord& r) {
    json j = r.to_json();
    j["dice"] = r.unseen_dice ? json{{unseen_name, *r.unseen_dice}} : json(nullptr);
    j.erase("unseen_dice");
    history << j.dump() << '\n';
    if (r.unseen_dice) {
      history.flush();
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("iter %6ld  L_x %.4f  L_u %.4f  mask %.3f  unseen Dice %.2f  (%.0f s)\n", r.iteration,
                  r.losses.at("L_x"), r.losses.at("L_u"), r.losses.at("mask_rate"), *r.unseen_dice, s);
      std::fflush(stdout);
    }
  };
  hooks.after_step = [&](TrainState& state) {
    if (cfg.eval_every > 0 && state.iteration % cfg.eval_every == 0) {
      save_state(run, state, cfg, train, unseen_name);
    }
  };
  TrainResult result = train_loop(train, loo.test, cfg, hooks, std::move(resume));
  history.close();

  TrainState& state = result.state;
  save_state(run, state, cfg, train, unseen_name);
  SegmentationNet inference =
      state.pair.teacher.converted() ? strip_individual_branches(state.pair.teacher) : state.pair.teacher;
  save_checkpoint(inference, run.checkpoints() / "inference.ckpt",
                  checkpoint_metadata(cfg, "inference", state.iteration, train, unseen_name));
  std::printf("run %s finished at iteration %ld\n", run.root.string().c_str(), state.iteration);
  return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  std::string domains;
  int unseen = 0;
  int batch = 16;
  fs::path csv;
  bool describe = false;
};

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidInput("--domains: '" + item + "' is not a domain id");
    }
  }
  return ids;
}

int cmd_eval(const EvalArgs& a) {
  auto loaded = load_checkpoint(a.checkpoint);
  SegmentationNet& net = loaded.net;
  if (a.describe) {
    const auto counts = describe_parameters(net);
    std::printf("parameters (learnable)\n");
    std::printf("  plain network      %zu\n", counts.plain);
    std::printf("  training (#Par)    %zu\n", counts.training);
    std::printf("  inference (#Par)   %zu\n", counts.inference);
    std::printf("  buffers            %zu\n", net.count_parameters().buffers);
    std::printf("  n_domains          %d%s\n", net.n_domains(), net.stripped() ? " (individual branches stripped)" : "");
    if (a.data.empty()) return 0;
  }
  if (a.data.empty()) throw InvalidInput("--data is required");
  const DatasetRegistry reg = load_registry(a.data);
  std::vector<int> ids;
  if (!a.domains.empty() && a.domains != "all") ids = parse_id_list(a.domains);
  else if (a.domains == "all") {
    for (int d = 1; d <= reg.n_domains(); ++d) ids.push_back(d);
  } else if (a.unseen > 0) ids = {a.unseen};
  else if (loaded.metadata.contains("unseen")) ids = {loaded.metadata["unseen"].get<int>()};
  else throw InvalidInput("no test domain: pass --unseen or --domains");

  // Inference takes only images; domain ids merely label the report rows.
  std::vector<DomainSample> samples;
  for (int id : ids) {
    for (const DomainSample* s : reg.samples(DomainId{id})) {
      if (!s->mask) throw InvalidInput("sample " + s->sample_id + " has no mask");
      samples.push_back(*s);
    }
  }
  const EvalReport report = evaluate(net, samples, reg.n_classes(), a.batch, domain_names(reg));
  const std::string csv = report.to_csv();
  std::fputs(csv.c_str(), stdout);
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw InvalidInput("cannot write " + a.csv.string());
    out << csv;
  }
  return 0;
}

// --------------------------------------------------------------- plot-stats

struct PlotStatsArgs {
  fs::path checkpoint;
  std::string site;
  std::string format = "png";
  fs::path out;
};

int cmd_plot_stats(const PlotStatsArgs& a) {
  const PlotFormat format = parse_plot_format(a.format);
  auto loaded = load_checkpoint(a.checkpoint);
  SegmentationNet& net = loaded.net;
  if (!net.converted() || net.stripped()) {
    throw InvalidInput("plot-stats needs a converted checkpoint with individual branches");
  }
  std::vector<std::string> names;
  if (loaded.metadata.contains("domain_names")) names = loaded.metadata["domain_names"].get<std::vector<std::string>>();
  const fs::path out = a.out.empty() ? default_plot_dir(a.checkpoint) : a.out;
  fs::create_directories(out);

  bool found = false;
  std::printf("site,channels,max_mean_gap,max_var_ratio,file\n");
  for (auto& [name, slot] : net.norm_slots()) {
    if (!a.site.empty() && a.site != name) continue;
    found = true;
    const NormSite& site = slot->site();
    LinePanel means{"running mean: " + name, "channel", "mean", {}};
    LinePanel vars{"running variance: " + name, "channel", "variance", {}};
    double gap = 0.0, ratio = 1.0;
    for (int k = 0; k < site.n_domains(); ++k) {
      const auto& b = site.individual()[k];
      const std::string label = k < static_cast<int>(names.size()) ? names[k] : "domain " + std::to_string(k + 1);
      means.series.push_back({label, {b.running_mean.begin(), b.running_mean.end()}});
      vars.series.push_back({label, {b.running_var.begin(), b.running_var.end()}});
      for (int j = 0; j < k; ++j) {
        const auto& o = site.individual()[j];
        for (int c = 0; c < site.channels(); ++c) {
          gap = std::max(gap, static_cast<double>(std::abs(b.running_mean[c] - o.running_mean[c])));
          const double hi = std::max(b.running_var[c], o.running_var[c]);
          const double lo = std::max(std::min(b.running_var[c], o.running_var[c]), 1e-12f);
          ratio = std::max(ratio, hi / lo);
        }
      }
    }
    const fs::path file = out / (name + extension(format));
    write_line_plot(file, {means, vars}, format);
    std::printf("%s,%d,%.6g,%.6g,%s\n", name.c_str(), site.channels(), gap, ratio, file.string().c_str());
  }
  if (!found) throw InvalidInput("no normalization site named '" + a.site + "'");
  return 0;
}

// ---------------------------------------------------------- diagnose-pseudo

struct DiagnoseArgs {
  fs::path checkpoint;
  fs::path mixed_checkpoint;
  fs::path data;
  int batch = 4;
  std::string format = "png";
  fs::path out;
  fs::path csv;
};

int cmd_diagnose_pseudo(const DiagnoseArgs& a) {
  const PlotFormat format = parse_plot_format(a.format);
  auto loaded = load_checkpoint(a.checkpoint);
  if (!loaded.net.converted() || loaded.net.stripped()) {
    throw InvalidInput("diagnose-pseudo needs a converted checkpoint with individual branches");
  }
  const TrainConfig cfg = config_from_metadata(loaded.metadata);
  const DatasetRegistry all = load_registry(a.data);
  const int unseen = loaded.metadata.value("unseen", cfg.unseen);
  // Rebuild the training split so the unlabeled pool matches the one the
  // teacher pseudo-labeled during training.
  const DatasetRegistry train =
      split_labeled_unlabeled(leave_one_out(all, DomainId{unseen}).train, cfg.labeled_fraction, cfg.seed);
  if (train.n_domains() != loaded.net.n_domains()) {
    throw InvalidInput("checkpoint has " + std::to_string(loaded.net.n_domains()) + " domains, data has " +
                       std::to_string(train.n_domains()) + " source domains");
  }
  const auto individual = pseudo_label_quality(loaded.net, train, PseudoLabelMode::IfEnsemble, cfg, a.batch);
  std::optional<LoadedCheckpoint> mixed_ckpt;
  if (!a.mixed_checkpoint.empty()) mixed_ckpt = load_checkpoint(a.mixed_checkpoint);
  SegmentationNet& mixed_net = mixed_ckpt ? mixed_ckpt->net : loaded.net;
  const auto mixed = pseudo_label_quality(mixed_net, train, PseudoLabelMode::SingleBn, cfg, a.batch);

  std::ostringstream csv;
  csv << "domain,dice_individual,dice_mixed,samples\n";
  BarChart chart{"pseudo-label Dice on the unlabeled pool", "Dice (%)", {}, {{"individual (IF)", {}}, {"mixed (single BN)", {}}}};
  for (std::size_t i = 0; i < individual.size(); ++i) {
    csv << individual[i].name << ',' << 100.0 * individual[i].dice << ',' << 100.0 * mixed[i].dice << ',' << individual[i].samples << '\n';
    chart.categories.push_back(individual[i].name);
    chart.groups[0].y.push_back(100.0 * individual[i].dice);
    chart.groups[1].y.push_back(100.0 * mixed[i].dice);
  }
  std::fputs(csv.str().c_str(), stdout);
  if (!a.csv.empty()) std::ofstream(a.csv) << csv.str();
  const fs::path out = a.out.empty() ? default_plot_dir(a.checkpoint) : a.out;
  fs::create_directories(out);
  const fs::path file = out / (std::string("pseudo_label_quality") + extension(format));
  write_bar_plot(file, chart, format);
  std::printf("plot: %s\n", file.string().c_str());
  return 0;
}

// ------------------------------------------------------------------- config

int cmd_config(const fs::path& file, CLI::App* cmd, const std::map<std::string, std::string>& overrides) {
  TrainConfig cfg = file.empty() ? TrainConfig{} : TrainConfig::load(file);
  apply_overrides(cfg, cmd, overrides);
  cfg.validate();
  std::printf("# config hash %s\n", cfg.hash().c_str());
  for (const auto& key : config_keys()) std::printf("%-22s = %-14s # %s\n", key.name.c_str(), cfg.get(key.name).c_str(), key.help.c_str());
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised domain-generalization segmentation on synthetic multi-domain data"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic multi-domain dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--domains", gen.domains, "number of domains (sources plus the unseen one)")->capture_default_str();
  g->add_option("--n", gen.n, "samples per domain")->capture_default_str();
  g->add_option("--size", gen.size, "image side in pixels")->capture_default_str();
  g->add_option("--classes", gen.classes, "2 (object) or 3 (object with core)")->capture_default_str();
  g->add_option("--seed", gen.seed, "generator seed")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model with one domain held out");
  t->add_option("--data", train.data, "dataset root (see generate)");
  t->add_option("--config", train.config, "key = value config file");
  t->add_option("--name", train.name, "run name (default: run-<config hash>)");
  t->add_option("--runs-dir", train.runs_dir, "parent of run directories")->capture_default_str();
  t->add_option("--resume", train.resume, "continue the run in this directory");
  add_config_flags(t, train.overrides);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint with the aggregated branch");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--data", ev.data, "dataset root");
  e->add_option("--unseen", ev.unseen, "test domain id (default: the checkpoint's held-out domain)");
  e->add_option("--domains", ev.domains, "comma-separated domain ids, or 'all'");
  e->add_option("--batch", ev.batch, "images per forward pass")->capture_default_str();
  e->add_option("--csv", ev.csv, "also write the report here");
  e->add_flag("--describe", ev.describe, "print training vs inference parameter counts");

  PlotStatsArgs ps;
  auto* p = app.add_subcommand("plot-stats", "plot per-domain running statistics of each normalization site");
  p->add_option("--checkpoint", ps.checkpoint, "converted checkpoint")->required();
  p->add_option("--site", ps.site, "only this site, e.g. encoder.0.norm1");
  p->add_option("--format", ps.format, "png or svg")->capture_default_str();
  p->add_option("--out", ps.out, "output directory (default: the run's plots/)");

  DiagnoseArgs dg;
  auto* d = app.add_subcommand("diagnose-pseudo", "pseudo-label quality with individual vs mixed normalization");
  d->add_option("--checkpoint", dg.checkpoint, "converted teacher checkpoint")->required();
  d->add_option("--mixed-checkpoint", dg.mixed_checkpoint, "plain-normalization teacher for the mixed column");
  d->add_option("--data", dg.data, "dataset root")->required();
  d->add_option("--batch", dg.batch, "samples per domain per forward pass")->capture_default_str();
  d->add_option("--format", dg.format, "png or svg")->capture_default_str();
  d->add_option("--out", dg.out, "plot directory (default: the run's plots/)");
  d->add_option("--csv", dg.csv, "also write the table here");

  fs::path config_file;
  std::map<std::string, std::string> config_overrides;
  auto* c = app.add_subcommand("config", "print the resolved configuration with every key documented");
  c->add_option("--config", config_file, "key = value config file");
  add_config_flags(c, config_overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(train, t, args);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_plot_stats(ps);
    if (*d) return cmd_diagnose_pseudo(dg);
    if (*c) return cmd_config(config_file, c, config_overrides);
  } catch (const InvalidInput& ex) {
    std::fprintf(stderr, "error: invalid-input: %s\n", one_line(ex.what()).c_str());
    return 2;
  } catch (const LoadError& ex) {
    std::fprintf(stderr, "error: load: %s\n", one_line(ex.what()).c_str());
    return 3;
  } catch (const NumericError& ex) {
    std::fprintf(stderr, "error: numeric: %s\n", one_line(ex.what()).c_str());
    return 4;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: internal: %s\n", one_line(ex.what()).c_str());
    return 1;
  }
  return 0;
}
