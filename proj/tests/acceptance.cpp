// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hmhi/cli.hpp"
#include "hmhi/pipeline.hpp"
#include "oracle_metrics.hpp"

using namespace hmhi;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cli(std::vector<std::string> args, std::string* captured = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (captured) *captured = out.str();
  if (code != kExitOk) std::cerr << "hmhi " << args.front() << " exited " << code << ": " << err.str();
  return code;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Same relative file set with identical contents.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t* compared) {
  std::set<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.insert(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.insert(fs::relative(e.path(), b));
  if (fa != fb || fa.empty()) return false;
  for (const auto& f : fa)
    if (bytes(a / f) != bytes(b / f)) return false;
  *compared += fa.size();
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  const auto da = a.data(), db = b.data();
  return a.shape() == b.shape() && std::equal(da.begin(), da.end(), db.begin());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto da = a.data(), db = b.data();
  double m = 0;
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

RunConfig toy(std::uint64_t seed) {
  RunConfig c;
  c.pyramid.side = 32;
  c.seed = seed;
  return c;
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> random_video(std::size_t length, std::size_t side, Rng& rng) {
  std::vector<Tensor> frames, flows;
  for (std::size_t t = 0; t < length; ++t) {
    frames.push_back(Tensor::uniform({3, side, side}, 0, 1, rng));
    flows.push_back(Tensor::uniform({3, side, side}, 0, 1, rng));
  }
  return {frames, flows};
}

const std::vector<std::string> kSide32{"--set", "model.side=32"};

std::vector<std::string> side32(std::vector<std::string> args) {
  args.insert(args.end(), kSide32.begin(), kSide32.end());
  return args;
}

void gradient_integrity(const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli({"gradcheck", "--out", (root / "gradcheck").string()});
  const double secs = seconds_since(t0);
  double worst = 0;
  std::size_t blocks = 0, entries = 0;
  bool all = code == kExitOk;
  for (const auto& b : nlohmann::json::parse(bytes(root / "gradcheck" / "gradcheck.json"))) {
    ++blocks;
    entries += b["entries"].get<std::size_t>();
    worst = std::max(worst, b["worst_rel_error"].get<double>());
    all = all && b["passed"].get<bool>();
  }
  report(all && worst < 1e-4 && secs < 300, "gradient integrity",
         std::to_string(blocks) + " checks incl. full toy model (side 32, channels 4,8,16,32, N=2, L=3), " +
             std::to_string(entries) + " entries, worst rel error " + fmt(worst) + " (< 1e-4), " + fmt(secs) +
             " s (< 300 s)");
}

void first_frame_bypass() {
  Rng rng(11);
  int equal = 0, differ = 0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    const RunConfig cfg = toy(1000 + draw);
    const ModelParams m = ModelParams::create(cfg);
    const auto [frames, flows] = random_video(2, 32, rng);
    NoGradGuard guard;
    SessionState state(cfg);
    const Tensor f1 = process_frame(state, frames[0], flows[0], m);
    const Tensor f2 = process_frame(state, frames[1], flows[1], m);
    equal += bitwise_equal(f1, baseline_forward(frames[0], flows[0], m));
    differ += max_abs_diff(f2, baseline_forward(frames[1], flows[1], m)) > 0;
  }
  report(equal == 20 && differ == 20, "first-frame bypass",
         "frame 1 bitwise equal to baseline in " + std::to_string(equal) + "/20 draws, frame 2 differs in " +
             std::to_string(differ) + "/20");
}

void fifo_suite() {
  std::size_t cases = 0, ok = 0;
  for (std::size_t n = 1; n <= 5; ++n)
    for (std::size_t k = 1; k <= 3; ++k)
      for (std::int64_t length = 1; length <= 20; ++length) {
        MemoryBank bank(2, n, k);
        for (std::int64_t f = 0; f < length; ++f) bank.offer(f, [] { return Tensor::zeros({1, 1}); });
        // Stored frames are the multiples of k; the bank keeps the newest n.
        std::vector<std::int64_t> expect;
        const std::int64_t last = (length - 1) / std::int64_t(k);
        for (std::int64_t j = std::max<std::int64_t>(0, last - std::int64_t(n) + 1); j <= last; ++j)
          expect.push_back(j * std::int64_t(k));
        ++cases;
        ok += bank.frame_indices() == expect;
      }
  report(ok == cases, "FIFO/stride suite",
         std::to_string(ok) + "/" + std::to_string(cases) + " (N, k, length) cases match the closed-form index set");
}

void permutation_invariance() {
  const RunConfig cfg = toy(21);
  const ModelParams m = ModelParams::create(cfg);
  Rng rng(22);
  const auto [frames, flows] = random_video(6, 32, rng);
  NoGradGuard guard;
  SessionState state(cfg);
  for (std::size_t t = 0; t < 5; ++t) process_frame(state, frames[t], flows[t], m);
  double worst = 0;
  std::size_t tokens = 0;
  for (int level : {2, 4}) {
    const MemoryBank& bank = state.banks.at(level);
    const Tensor f = encode_frame(frames[5], flows[5], m.encoder, cfg.pyramid).level(level).fused;
    const Tensor base = mem_refine(f, bank, m.readers.at(level)).refined;
    const std::vector<Tensor> entries = bank.features();
    const Tensor all = concat(entries, 0);
    const std::size_t total = all.dim(0), per = entries.front().dim(0);
    tokens = std::max(tokens, total);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::size_t> perm(total);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(perm));
      const Tensor mixed = gather_rows(all, perm);
      MemoryBank shuffled(level, bank.capacity(), 1);
      for (std::size_t e = 0; e < entries.size(); ++e) {
        std::vector<std::size_t> rows(per);
        std::iota(rows.begin(), rows.end(), e * per);
        shuffled.offer(std::int64_t(e), [&] { return gather_rows(mixed, rows); });
      }
      worst = std::max(worst, max_abs_diff(mem_refine(f, shuffled, m.readers.at(level)).refined, base));
    }
  }
  report(worst <= 1e-10, "permutation invariance",
         "100 co-permutations of up to " + std::to_string(tokens) +
             " memory tokens on levels 2 and 4, worst max-abs change " + fmt(worst) + " (<= 1e-10)");
}

void isolation() {
  const RunConfig cfg = toy(31);
  Rng rng(32);
  const auto [frames, flows] = random_video(2, 32, rng);
  auto traced = [&](const ModelParams& m) {
    NoGradGuard guard;
    SessionState state(cfg);
    FrameTrace trace;
    process_frame(state, frames[0], flows[0], m);
    process_frame(state, frames[1], flows[1], m, &trace);
    return trace.pyramid;
  };
  const ModelParams base = ModelParams::create(cfg);
  const FeaturePyramid ref = traced(base);
  bool ok = true;
  std::string detail;
  for (const char* prefix : {"sgim", "plam"}) {
    ModelParams m = base.clone();
    for (const auto& np : m.store.named(prefix))
      for (auto& v : Tensor(np.tensor).mutable_data()) v += rng.uniform(-0.3, 0.3);
    const FeaturePyramid p = traced(m);
    const int kept = std::string(prefix) == "sgim" ? 4 : 2, moved = 6 - kept;
    const bool same = bitwise_equal(p.level(kept).fused, ref.level(kept).fused);
    const double change = max_abs_diff(p.level(moved).fused, ref.level(moved).fused);
    ok = ok && same && change > 0;
    detail += std::string(detail.empty() ? "" : "; ") + "perturbing " + prefix + ": F" + std::to_string(kept) +
              "'' " + (same ? "bitwise unchanged" : "CHANGED") + ", F" + std::to_string(moved) + "'' moves by " +
              fmt(change);
  }
  report(ok, "interaction isolation", detail);
}

void metric_oracles() {
  Rng rng(41);
  int exact = 0, fm_ok = 0;
  double worst_fm = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto h = std::size_t(rng.uniform_int(1, 32)), w = std::size_t(rng.uniform_int(1, 32));
    const Mask a = oracle::random_mask(h, w, rng), b = oracle::random_mask(h, w, rng);
    const int tol = int(rng.uniform_int(0, 4));
    ProbMap p{h, w, std::vector<double>(h * w)};
    for (auto& v : p.values) v = rng.uniform();
    exact += region_similarity(a, b) == oracle::jaccard(a, b) && mae(p, b) == oracle::mae(p, b) &&
             boundary_f(a, b, tol) == oracle::boundary_f(a, b, tol);
    const double d = std::abs(max_f_measure(p, b) - oracle::max_f(p, b));
    worst_fm = std::max(worst_fm, d);
    fm_ok += d <= 1e-12;
  }
  report(exact == 500 && fm_ok == 500, "metric oracle equivalence",
         "J, MAE, boundary F exact on " + std::to_string(exact) + "/500 pairs; F_m worst deviation " + fmt(worst_fm) +
             " (<= 1e-12)");
}

struct CsvLoss {
  double first = 0, last = 0;
};

CsvLoss read_losses(const fs::path& csv) {
  std::istringstream in(bytes(csv));
  std::string line;
  std::getline(in, line);
  CsvLoss r;
  bool first = true;
  while (std::getline(in, line)) {
    const double v = std::stod(line.substr(line.find(',') + 1));
    if (first) r.first = v;
    first = false;
    r.last = v;
  }
  return r;
}

void overfit(const fs::path& root) {
  const auto data = root / "overfit_data";
  if (cli({"generate", "--out", data.string(), "--scenario", "translate", "--side", "32", "--seed", "7"}) != kExitOk) {
    report(false, "overfit convergence", "generate failed");
    return;
  }
  const std::string manifest = (data / "clip_0000" / "manifest.json").string();
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = root / "overfit_train";
  const int code = cli(side32({"train", "--manifest", manifest, "--steps", "2000", "--seed", "7", "--log-every", "0",
                               "--out", run.string()}));
  const double secs = seconds_since(t0);
  const auto eval = root / "overfit_eval";
  const int ecode = cli(side32({"eval", "--manifest", manifest, "--checkpoint",
                                (run / "checkpoint_final.bin").string(), "--out", eval.string()}));
  if (code != kExitOk || ecode != kExitOk) {
    report(false, "overfit convergence", "train or eval failed");
    return;
  }
  const CsvLoss loss = read_losses(run / "loss.csv");
  const double reduction = 1.0 - loss.last / loss.first;
  const double j = nlohmann::json::parse(bytes(eval / "metrics.json"))["aggregate"]["J"].get<double>();

  // A second identical run must reproduce every output byte.
  const auto again = root / "overfit_train_again";
  std::size_t compared = 0;
  const bool repeat = cli(side32({"train", "--manifest", manifest, "--steps", "2000", "--seed", "7", "--log-every",
                                  "0", "--out", again.string()})) == kExitOk &&
                      same_tree(run, again, &compared);
  report(reduction >= 0.9 && j >= 0.9 && secs < 900 && repeat, "overfit convergence",
         "side 32, N=5, k=1, L=5, 2000 steps on one translate clip: loss " + fmt(loss.first) + " -> " +
             fmt(loss.last) + " (" + fmt(100 * reduction) + "% reduction, >= 90%), training J " + fmt(j) +
             " (>= 0.90), " + fmt(secs) + " s (< 900 s), rerun " + (repeat ? "bitwise identical" : "DIFFERS"));
}

void ablation(const fs::path& root) {
  const auto train = root / "ablation_train", eval = root / "ablation_eval", out = root / "ablation";
  if (cli({"generate", "--out", train.string(), "--scenario", "mixed", "--count", "5", "--side", "32", "--seed",
           "100"}) != kExitOk ||
      cli({"generate", "--out", eval.string(), "--scenario", "mixed", "--count", "10", "--side", "32", "--seed",
           "200"}) != kExitOk) {
    report(false, "ablation report", "generate failed");
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli(side32({"eval", "--grid", "--manifest-list", (eval / "manifests.txt").string(),
                               "--train-manifest-list", (train / "manifests.txt").string(), "--train-steps", "400",
                               "--out", out.string()}));
  const double secs = seconds_since(t0);
  if (code != kExitOk || !fs::exists(out / "ablation_report.json")) {
    report(false, "ablation report", "grid command did not produce a report");
    return;
  }
  std::string cells;
  std::size_t n = 0;
  for (const auto& c : nlohmann::json::parse(bytes(out / "ablation_report.json"))) {
    cells += std::string(cells.empty() ? "" : ", ") + c["cell"].get<std::string>() + " " + fmt(c["mean_j"].get<double>());
    ++n;
  }
  report(n == 11, "ablation report (soft, no threshold)",
         std::to_string(n) + " cells, 10 eval clips, 400 training steps each, " + fmt(secs) + " s; mean J: " + cells);
}

void determinism(const fs::path& root) {
  std::size_t compared = 0;
  bool ok = true;
  std::string failed;
  auto twice = [&](const std::string& name, const std::function<std::vector<std::string>(const fs::path&)>& args) {
    const auto a = root / "det" / (name + "_a"), b = root / "det" / (name + "_b");
    const bool same = cli(args(a)) == kExitOk && cli(args(b)) == kExitOk && same_tree(a, b, &compared);
    if (!same) failed += " " + name;
    ok = ok && same;
  };
  twice("generate", [](const fs::path& d) {
    return std::vector<std::string>{"generate", "--out", d.string(), "--scenario", "mixed", "--count", "6", "--side",
                                    "32", "--seed", "5"};
  });
  const auto clips = root / "det" / "generate_a";
  twice("train", [&](const fs::path& d) {
    return side32({"train", "--manifest-list", (clips / "manifests.txt").string(), "--steps", "30", "--seed", "5",
                   "--out", d.string()});
  });
  const auto ckpt = root / "det" / "train_a" / "checkpoint_final.bin";
  twice("eval", [&](const fs::path& d) {
    return side32({"eval", "--manifest-list", (clips / "manifests.txt").string(), "--checkpoint", ckpt.string(),
                   "--save-masks", "--out", d.string()});
  });
  twice("eval-train", [&](const fs::path& d) {
    return side32({"eval", "--manifest-list", (clips / "manifests.txt").string(), "--train-manifest",
                   (clips / "clip_0000" / "manifest.json").string(), "--train-steps", "10", "--interaction", "swapped",
                   "--out", d.string()});
  });
  twice("gradcheck", [](const fs::path& d) {
    return std::vector<std::string>{"gradcheck", "--full-model-entries", "4", "--out", d.string()};
  });
  report(ok, "determinism",
         "generate, train, eval and gradcheck run twice each: " + std::to_string(compared) +
             " output files compared, " + (ok ? "all bitwise identical" : "mismatch in" + failed));
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "hmhi_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  try {
    gradient_integrity(root);
    first_frame_bypass();
    fifo_suite();
    permutation_invariance();
    isolation();
    metric_oracles();
    overfit(root);
    ablation(root);
    determinism(root);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(failures) + " FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
