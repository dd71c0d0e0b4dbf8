#include "hmhi/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hmhi/checks.hpp"
#include "hmhi/image_io.hpp"
#include "hmhi/pipeline.hpp"

namespace hmhi {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required) {
  cmd->add_option("--config", args.config_path, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "override a config field, e.g. --set memory.capacity=3")
      ->allow_extra_args(false);
  auto* out = cmd->add_option("--out", args.out_dir, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", args.seed, "random seed (overrides train.seed)");
}

RunConfig resolve_config(const CommonArgs& args, RunConfig base) {
  RunConfig config = args.config_path.empty() ? base : load_config(args.config_path, base);
  for (const auto& o : args.overrides) apply_override(config, o);
  if (args.seed) config.seed = *args.seed;
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void echo_config(const fs::path& dir, const RunConfig& config) {
  fs::create_directories(dir);
  write_text(dir / "config.txt", format_config(config));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<fs::path> collect_manifests(const std::vector<std::string>& manifests, const std::string& list) {
  std::vector<fs::path> out(manifests.begin(), manifests.end());
  if (!list.empty()) {
    std::ifstream in(list);
    if (!in) throw IoError("cannot read manifest list " + list);
    const fs::path base = fs::path(list).parent_path();
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#') continue;
      const fs::path p(line);
      out.push_back(p.is_absolute() ? p : base / p);
    }
  }
  return out;
}

std::vector<ClipSample> load_clips(const std::vector<fs::path>& manifests) {
  std::vector<ClipSample> clips;
  for (const auto& m : manifests) clips.push_back(load_clip(m));
  return clips;
}

void check_clip_geometry(const std::vector<ClipSample>& clips, const RunConfig& config) {
  for (const auto& c : clips) {
    if (c.height != config.pyramid.side || c.width != config.pyramid.side) {
      throw ConfigError("clip is " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                        " but model.side is " + std::to_string(config.pyramid.side));
    }
  }
}

struct TrainResult {
  ModelParams params;
  std::vector<double> losses;
  ModelParams best;
  double best_loss = 0.0;
  std::size_t best_step = 0;
};

TrainResult train_model(const RunConfig& config, const std::vector<ClipSample>& clips, ModelParams params,
                        std::ostream* progress, std::size_t log_every) {
  if (clips.empty()) throw ConfigError("training needs at least one clip");
  AdamW optim(config.optim);
  TrainResult r{std::move(params), {}, {}, 0.0, 0};
  std::vector<std::vector<double>> snapshot;
  std::vector<std::vector<double>> best_values;
  for (std::size_t step = 0; step < config.steps; ++step) {
    snapshot.clear();
    for (const auto& [name, t] : r.params.store.all()) snapshot.emplace_back(t.data().begin(), t.data().end());
    const double loss = train_step(clips[step % clips.size()], r.params, optim, config);
    r.losses.push_back(loss);
    // The loss was measured on the parameters before this update.
    if (step == 0 || loss < r.best_loss) {
      r.best_loss = loss;
      r.best_step = step + 1;
      best_values = snapshot;
    }
    if (progress && log_every > 0 && ((step + 1) % log_every == 0 || step + 1 == config.steps)) {
      *progress << "step " << step + 1 << "/" << config.steps << " loss " << fmt_double(loss) << '\n';
    }
  }
  r.best = r.params.clone();
  if (!best_values.empty()) {
    std::size_t i = 0;
    for (const auto& [name, handle] : r.best.store.all()) {
      Tensor t = handle;
      std::copy(best_values[i].begin(), best_values[i].end(), t.mutable_data().begin());
      ++i;
    }
  }
  return r;
}

SequenceReport evaluate_clip(const ClipSample& clip, const std::string& name, const ModelParams& params,
                             const RunConfig& config, bool gt_as_prediction, const fs::path* save_dir) {
  const int tol = config.boundary_tolerance >= 0 ? config.boundary_tolerance
                                                 : default_boundary_tolerance(clip.height, clip.width);
  std::vector<FrameMetrics> frames;
  std::vector<ProbMap> probs;
  if (gt_as_prediction) {
    for (const auto& g : clip.gt_masks) {
      ProbMap p{g.height, g.width, std::vector<double>(g.pixels.begin(), g.pixels.end())};
      probs.push_back(std::move(p));
    }
  } else {
    NoGradGuard no_grad;
    for (const auto& logits : process_video(clip.frames, clip.flows, params, config)) {
      probs.push_back(logits_to_prob(logits));
    }
  }
  for (std::size_t t = 0; t < probs.size(); ++t) {
    frames.push_back(evaluate_frame(probs[t], clip.gt_masks[t], config.threshold, tol));
    if (save_dir) {
      std::ostringstream file;
      file << std::setw(5) << std::setfill('0') << t << ".png";
      fs::create_directories(*save_dir / name);
      write_prob_png(*save_dir / name / file.str(), probs[t]);
    }
  }
  return summarize(name, std::move(frames));
}

nlohmann::json metrics_document(const std::vector<SequenceReport>& reports) {
  nlohmann::json doc;
  doc["sequences"] = nlohmann::json::array();
  for (const auto& r : reports) doc["sequences"].push_back(to_json(r));
  doc["aggregate"] = to_json(aggregate(reports));
  return doc;
}

void write_metrics(const fs::path& dir, const std::vector<SequenceReport>& reports) {
  fs::create_directories(dir);
  write_text(dir / "metrics.json", metrics_document(reports).dump(2) + "\n");
  write_text(dir / "metrics.jsonl", to_json_lines(reports));
}

// ---- generate ----------------------------------------------------------------

struct GenerateArgs {
  CommonArgs common;
  std::string scenario = "translate";
  std::size_t count = 1;
  std::optional<std::size_t> length;
  std::optional<std::size_t> side;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  RunConfig config = resolve_config(a.common, {});
  if (a.side) config.pyramid.side = *a.side;
  if (a.length) config.sequence_length = *a.length;
  config.validate();
  if (a.count == 0) throw ConfigError("--count must be at least 1");
  const bool mixed = a.scenario == "mixed";
  const Scenario fixed = mixed ? Scenario::translate : parse_scenario(a.scenario);

  const fs::path dir(a.common.out_dir);
  echo_config(dir, config);
  std::string listing;
  for (std::size_t i = 0; i < a.count; ++i) {
    const Scenario s = mixed ? all_scenarios()[i % all_scenarios().size()] : fixed;
    std::ostringstream name;
    name << "clip_" << std::setw(4) << std::setfill('0') << i;
    const ClipSample clip =
        generate_clip(s, config.pyramid.side, config.pyramid.side, config.sequence_length, config.seed + i);
    save_clip(clip, dir / name.str());
    listing += name.str() + "/manifest.json\n";
  }
  write_text(dir / "manifests.txt", listing);
  out << "wrote " << a.count << " clip(s) to " << dir.string() << '\n';
  return kExitOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  CommonArgs common;
  std::vector<std::string> manifests;
  std::string manifest_list;
  std::optional<std::size_t> steps;
  std::string init;
  std::size_t log_every = 100;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig config = resolve_config(a.common, {});
  if (a.steps) config.steps = *a.steps;
  config.validate();
  const auto manifests = collect_manifests(a.manifests, a.manifest_list);
  if (manifests.empty()) throw ConfigError("train: no clips given (use --manifest or --manifest-list)");
  const auto clips = load_clips(manifests);
  check_clip_geometry(clips, config);

  const fs::path dir(a.common.out_dir);
  echo_config(dir, config);
  ModelParams init = a.init.empty() ? ModelParams::create(config) : load_checkpoint(a.init, config);
  save_checkpoint(init, dir / "checkpoint_init.bin");
  TrainResult r = train_model(config, clips, std::move(init), &out, a.log_every);

  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) csv += std::to_string(i + 1) + "," + fmt_double(r.losses[i]) + "\n";
  write_text(dir / "loss.csv", csv);
  save_checkpoint(r.params, dir / "checkpoint_final.bin");
  save_checkpoint(r.best, dir / "checkpoint_best.bin");
  nlohmann::json summary;
  summary["steps"] = r.losses.size();
  if (!r.losses.empty()) {
    summary["first_loss"] = r.losses.front();
    summary["final_loss"] = r.losses.back();
    summary["best_loss"] = r.best_loss;
    summary["best_step"] = r.best_step;
  }
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  CommonArgs common;
  std::vector<std::string> manifests;
  std::string manifest_list;
  std::string checkpoint;
  std::vector<std::string> train_manifests;
  std::string train_manifest_list;
  std::optional<std::size_t> train_steps;
  std::optional<std::string> interaction;
  std::optional<std::string> memory_levels;
  std::optional<std::string> input_mode;
  bool gt_as_prediction = false;
  bool grid = false;
  bool save_masks = false;
};

struct GridCell {
  std::string name;
  std::set<int> levels;
  InteractionMode interaction;
  InputMode input;
};

std::vector<GridCell> ablation_cells() {
  using IM = InteractionMode;
  return {
      {"baseline", {}, IM::off, InputMode::both},
      {"memory_only", {2, 4}, IM::off, InputMode::both},
      {"s2h_only", {2, 4}, IM::s2h_only, InputMode::both},
      {"h2s_only", {2, 4}, IM::h2s_only, InputMode::both},
      {"swapped", {2, 4}, IM::swapped, InputMode::both},
      {"full", {2, 4}, IM::standard, InputMode::both},
      {"memory_l2", {2}, IM::standard, InputMode::both},
      {"memory_l4", {4}, IM::standard, InputMode::both},
      {"memory_l1234", {1, 2, 3, 4}, IM::standard, InputMode::both},
      {"input_image", {2, 4}, IM::standard, InputMode::image},
      {"input_flow", {2, 4}, IM::standard, InputMode::flow},
  };
}

std::vector<SequenceReport> run_eval_cell(const RunConfig& config, const EvalArgs& a,
                                          const std::vector<ClipSample>& eval_clips,
                                          const std::vector<std::string>& names,
                                          const std::vector<ClipSample>& train_clips, const fs::path& dir,
                                          std::ostream& out) {
  echo_config(dir, config);
  ModelParams params = a.checkpoint.empty() ? ModelParams::create(config) : load_checkpoint(a.checkpoint, config);
  if (!train_clips.empty() && config.steps > 0) {
    TrainResult r = train_model(config, train_clips, std::move(params), nullptr, 0);
    params = std::move(r.params);
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) {
      csv += std::to_string(i + 1) + "," + fmt_double(r.losses[i]) + "\n";
    }
    write_text(dir / "loss.csv", csv);
  }
  std::vector<SequenceReport> reports;
  const fs::path masks = dir / "masks";
  for (std::size_t i = 0; i < eval_clips.size(); ++i) {
    reports.push_back(evaluate_clip(eval_clips[i], names[i], params, config, a.gt_as_prediction,
                                    a.save_masks ? &masks : nullptr));
  }
  write_metrics(dir, reports);
  const FrameMetrics agg = aggregate(reports);
  out << dir.filename().string() << ": J " << fmt_double(agg.j) << " F " << fmt_double(agg.f) << " J&F "
      << fmt_double(agg.jf) << " MAE " << fmt_double(agg.mae) << " Fm " << fmt_double(agg.fm) << '\n';
  return reports;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  RunConfig config = resolve_config(a.common, {});
  if (a.interaction) config.interaction = parse_interaction_mode(*a.interaction);
  if (a.memory_levels) config.memory_levels = parse_levels(*a.memory_levels);
  if (a.input_mode) config.input_mode = parse_input_mode(*a.input_mode);
  if (a.train_steps) config.steps = *a.train_steps;
  config.validate();

  const auto manifests = collect_manifests(a.manifests, a.manifest_list);
  if (manifests.empty()) throw ConfigError("eval: no clips given (use --manifest or --manifest-list)");
  const auto eval_clips = load_clips(manifests);
  check_clip_geometry(eval_clips, config);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    std::ostringstream n;
    n << std::setw(3) << std::setfill('0') << i << "_" << clip_name(manifests[i]);
    names.push_back(n.str());
  }
  const auto train_clips = load_clips(collect_manifests(a.train_manifests, a.train_manifest_list));
  check_clip_geometry(train_clips, config);

  const fs::path dir(a.common.out_dir);
  if (!a.grid) {
    run_eval_cell(config, a, eval_clips, names, train_clips, dir, out);
    return kExitOk;
  }

  echo_config(dir, config);
  nlohmann::json report = nlohmann::json::array();
  std::ostringstream table;
  table << std::left << std::setw(14) << "cell" << std::setw(12) << "interaction" << std::setw(10) << "levels"
        << std::setw(8) << "input" << "mean J\n";
  for (const auto& cell : ablation_cells()) {
    RunConfig c = config;
    c.memory_levels = cell.levels;
    c.interaction = cell.interaction;
    c.input_mode = cell.input;
    const auto reports = run_eval_cell(c, a, eval_clips, names, train_clips, dir / "grid" / cell.name, out);
    const FrameMetrics agg = aggregate(reports);
    report.push_back({{"cell", cell.name},
                      {"interaction", to_string(cell.interaction)},
                      {"memory_levels", format_levels(cell.levels)},
                      {"input_mode", to_string(cell.input)},
                      {"mean_j", agg.j},
                      {"mean_f", agg.f},
                      {"mean_jf", agg.jf},
                      {"mean_mae", agg.mae},
                      {"mean_fm", agg.fm}});
    table << std::setw(14) << cell.name << std::setw(12) << to_string(cell.interaction) << std::setw(10)
          << (cell.levels.empty() ? "-" : format_levels(cell.levels)) << std::setw(8) << to_string(cell.input)
          << std::fixed << std::setprecision(4) << agg.j << '\n';
  }
  write_text(dir / "ablation_report.json", report.dump(2) + "\n");
  write_text(dir / "ablation_report.txt", table.str());
  out << table.str();
  return kExitOk;
}

// ---- gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
  CommonArgs common;
  bool inject_bug = false;
  std::size_t full_model_entries = 24;
  bool blocks_only = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  RunConfig config = resolve_config(a.common, toy_gradcheck_config());
  config.validate();
  GradSuiteOptions options;
  options.full_model_entries = a.full_model_entries;
  options.include_full_model = !a.blocks_only;
  options.check.seed = config.seed;
  if (a.inject_bug) options.check.inject_error = 1e-3;

  const auto results = run_gradcheck_suite(config, options);
  bool ok = true;
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& b : results) {
    const std::size_t checked = b.report.entries();
    const bool passed = b.report.passed();
    ok = ok && passed;
    out << std::left << std::setw(22) << b.block << (passed ? "PASS" : "FAIL") << "  worst_rel_error "
        << fmt_double(b.report.worst_rel_error) << " (" << b.report.worst_param << ")  entries " << checked << " (" << b.report.refined() << " kink-refined)  "
        << std::fixed << std::setprecision(2) << b.seconds << "s" << std::defaultfloat << '\n';
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : b.report.failures()) failures.push_back({{"param", f.name}, {"rel_error", f.rel_error}});
    doc.push_back({{"block", b.block},
                   {"passed", passed},
                   {"entries", checked},
                   {"kink_refined", b.report.refined()},
                   {"worst_rel_error", b.report.worst_rel_error},
                   {"worst_param", b.report.worst_param},
                   {"failures", failures}});
  }
  if (!a.common.out_dir.empty()) {
    const fs::path dir(a.common.out_dir);
    echo_config(dir, config);
    write_text(dir / "gradcheck.json", doc.dump(2) + "\n");
  }
  out << (ok ? "gradcheck: all blocks passed" : "gradcheck: FAILED") << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical memory video object segmentation toolkit", "hmhi"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "render synthetic clips and their manifests");
  add_common(g, gen.common, true);
  g->add_option("--scenario", gen.scenario, "translate|scale|occlude|multi_object|camera_pan|mixed")
      ->capture_default_str();
  g->add_option("--count", gen.count, "number of clips")->capture_default_str();
  g->add_option("--length", gen.length, "frames per clip (default train.sequence_length = 5)");
  g->add_option("--side", gen.side, "image side (default model.side = 64)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train on clip manifests; writes loss.csv and checkpoints");
  add_common(t, train.common, true);
  t->add_option("--manifest", train.manifests, "clip manifest (repeatable)");
  t->add_option("--manifest-list", train.manifest_list, "file listing manifests, one per line");
  t->add_option("--steps", train.steps, "optimizer steps (default train.steps = 2000)");
  t->add_option("--init", train.init, "start from this checkpoint");
  t->add_option("--log-every", train.log_every, "progress interval")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate J, F, MAE and F_m; --grid runs the ablation sweep");
  add_common(e, ev.common, true);
  e->add_option("--manifest", ev.manifests, "clip manifest to evaluate (repeatable)");
  e->add_option("--manifest-list", ev.manifest_list, "file listing evaluation manifests");
  e->add_option("--checkpoint", ev.checkpoint, "model checkpoint");
  e->add_option("--train-manifest", ev.train_manifests, "train on these clips before evaluating (repeatable)");
  e->add_option("--train-manifest-list", ev.train_manifest_list, "file listing training manifests");
  e->add_option("--train-steps", ev.train_steps, "training budget per cell (default train.steps)");
  e->add_option("--interaction", ev.interaction, "standard|swapped|s2h_only|h2s_only|off (default standard)");
  e->add_option("--memory-levels", ev.memory_levels, "comma-separated levels, empty for none (default 2,4)");
  e->add_option("--input-mode", ev.input_mode, "image|flow|both (default both)");
  e->add_flag("--gt-as-prediction", ev.gt_as_prediction, "score the ground truth against itself");
  e->add_flag("--grid", ev.grid, "run every ablation cell with the same budget");
  e->add_flag("--save-masks", ev.save_masks, "write predicted probability maps as PNG");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "central-difference gradient checks of every block and the model");
  add_common(c, gc.common, false);
  c->add_flag("--inject-bug", gc.inject_bug, "negative control: perturb one analytic gradient");
  c->add_option("--full-model-entries", gc.full_model_entries, "sampled entries per tensor for whole-model checks")
      ->capture_default_str();
  c->add_flag("--blocks-only", gc.blocks_only, "skip the whole-model check");

  std::vector<std::string> argv_store{"hmhi"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    std::ostringstream o, r;
    const int code = app.exit(ex, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train(train, out);
    if (*e) return cmd_eval(ev, out);
    if (*c) return cmd_gradcheck(gc, out);
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitCheckFailed;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace hmhi
