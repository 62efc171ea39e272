// seqdiou: synthetic fixtures, detection post-processing, evaluation and
// OFA numeric checks.
//
// Exit codes: 0 success, 1 usage/parse/validation error, 2 tolerance breach.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqdiou/seqdiou.hpp"

namespace {

using namespace seqdiou;

constexpr int kExitError = 1;
constexpr int kExitBreach = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<VideoDetections> load_detections(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  try {
    return parse_detections(in);
  } catch (const ParseError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::vector<VideoGroundTruth> load_ground_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  try {
    return parse_ground_truth(in);
  } catch (const ParseError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string spec;
  std::string out_dets;
  std::string out_gt;
};

int run_synth(const SynthArgs& a) {
  const auto spec = parse_synth_spec(read_file(a.spec));
  const auto data = generate(a.seed, spec);
  write_file(a.out_dets, write_detections(data.detections));
  write_file(a.out_gt, write_ground_truth(data.ground_truth));
  return 0;
}

struct PostprocessArgs {
  std::string method = "seq-diou-nms";
  double tau = 0.5;
  double tau1 = 0.6;
  double tau2 = 0.5;
  bool class_agnostic = false;
  std::string input;
  std::string output = "-";
};

int run_postprocess(const PostprocessArgs& a) {
  const auto videos = load_detections(a.input);
  std::vector<VideoDetections> out;
  out.reserve(videos.size());
  for (const auto& v : videos) {
    if (a.method == "nms" || a.method == "diou-nms") {
      NmsOptions opt;
      opt.overlap = {a.method == "nms" ? OverlapMetric::iou : OverlapMetric::diou, 1.0};
      opt.threshold = a.tau;
      opt.per_class = !a.class_agnostic;
      out.push_back(nms(v, opt));
    } else if (a.method == "seq-nms") {
      out.push_back(seq_nms(v, a.tau1, a.tau2).video);
    } else {
      out.push_back(seq_diou_nms(v, a.tau1, a.tau2).video);
    }
  }
  write_file(a.output, write_detections(out));
  return 0;
}

struct EvalArgs {
  std::string dets;
  std::string gt;
  double iou = 0.5;
  bool oracle_sorted = false;
  bool csv = false;
};

int run_eval(const EvalArgs& a) {
  const auto report = evaluate(load_detections(a.dets), load_ground_truth(a.gt),
                               {a.iou, a.oracle_sorted});
  std::ostringstream os;
  os << std::fixed;
  if (a.csv) {
    os << std::setprecision(6) << "class_id,num_gt,num_dets,true_positives,ap\n";
    for (const auto& c : report.classes) {
      os << c.class_id << ',' << c.num_gt << ',' << c.num_dets << ',' << c.true_positives << ','
         << c.ap << '\n';
    }
    os << "mAP,,,," << report.map << '\n';
  } else {
    os << std::setprecision(4);
    os << std::left << std::setw(8) << "class" << std::right << std::setw(8) << "num_gt"
       << std::setw(10) << "num_dets" << std::setw(8) << "tp" << std::setw(10) << "AP" << '\n';
    for (const auto& c : report.classes) {
      os << std::left << std::setw(8) << c.class_id << std::right << std::setw(8) << c.num_gt
         << std::setw(10) << c.num_dets << std::setw(8) << c.true_positives << std::setw(10) << c.ap
         << '\n';
    }
    os << "mAP " << report.map << '\n';
  }
  std::cout << os.str();
  return 0;
}

struct OfaCheckArgs {
  std::uint64_t seed = 0;
  std::size_t n = 4;
  std::size_t d = 8;
  std::size_t attn_dim = 0;
  bool stop_gradient = false;
  std::string reducer = "ofa";
};

int run_ofa_check(const OfaCheckArgs& a) {
  if (a.n < 1 || a.n > 8 || a.d < 2 || a.d > 16 || a.d % 2 != 0) {
    throw std::invalid_argument("ofa-check needs 1 <= N <= 8 and even 2 <= D <= 16");
  }
  GradCheckOptions gopt;
  gopt.stop_global_gradient = a.stop_gradient;
  gopt.ofa.reducer = a.reducer == "gcp" ? GlobalReducer::mean : GlobalReducer::objectness_weighted;

  Rng rng(a.seed);
  std::size_t resamples = 0;
  const auto inst = kink_free_instance(rng, a.n, a.d, gopt.kink_margin, resamples, a.attn_dim, gopt.ofa);
  const auto out = stacked_ofa(inst.features, inst.params, gopt.ofa);
  const auto [attn_dev, gate_dev] = normalisation_residuals(out);
  const auto perm = random_permutation(rng, a.n);
  const double perm_res = permutation_residual(inst.features, inst.params, perm, gopt.ofa);
  const auto grad = finite_diff_grad_check(inst.features, inst.params, gopt);

  const bool ok = attn_dev <= 1e-6 && gate_dev <= 1e-6 && perm_res == 0.0 &&
                  grad.max_rel_error < 1e-4 && !grad.kink;
  std::ostringstream os;
  os << std::setprecision(6) << std::scientific;
  os << "seed=" << a.seed << " n=" << a.n << " d=" << a.d << " resamples=" << resamples << '\n';
  os << "attention_row_sum_max_deviation=" << attn_dev << '\n';
  os << "gate_sum_max_deviation=" << gate_dev << '\n';
  os << "permutation_residual=" << perm_res << '\n';
  os << "max_gradient_relative_error=" << grad.max_rel_error << '\n';
  os << "min_relu_preactivation=" << grad.min_preactivation << '\n';
  os << "checked_entries=" << grad.checked << '\n';
  os << "status=" << (ok ? "ok" : "breach") << '\n';
  std::cout << os.str();
  if (!ok) {
    std::cerr << "ofa-check: tolerance breach (worst gradient entry: " << grad.worst << ")\n";
    return kExitBreach;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video detection post-processing (Sequence DIoU NMS), evaluation and OFA checks"};
  app.set_version_flag("--version", std::string(seqdiou::kVersion));
  app.require_subcommand(1);

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic ground truth / detection pair");
  cmd_synth->add_option("--seed", synth.seed, "Random seed")->required();
  cmd_synth->add_option("--spec", synth.spec, "Scenario spec (JSON)")->required()->check(CLI::ExistingFile);
  cmd_synth->add_option("--out-dets", synth.out_dets, "Detections JSONL output")->required();
  cmd_synth->add_option("--out-gt", synth.out_gt, "Ground truth JSONL output")->required();

  PostprocessArgs post;
  auto* cmd_post = app.add_subcommand("postprocess", "Suppress and rescore detections");
  cmd_post->add_option("--method", post.method, "nms | diou-nms | seq-nms | seq-diou-nms")
      ->check(CLI::IsMember({"nms", "diou-nms", "seq-nms", "seq-diou-nms"}))
      ->capture_default_str();
  cmd_post->add_option("--tau", post.tau, "Overlap threshold for nms / diou-nms")->capture_default_str();
  cmd_post->add_option("--tau1", post.tau1, "Linking threshold for sequence methods")->capture_default_str();
  cmd_post->add_option("--tau2", post.tau2, "Suppression threshold for sequence methods")->capture_default_str();
  cmd_post->add_flag("--class-agnostic", post.class_agnostic, "nms / diou-nms across classes");
  cmd_post->add_option("--input", post.input, "Detections JSONL")->required()->check(CLI::ExistingFile);
  cmd_post->add_option("--output", post.output, "Output JSONL ('-' for stdout)")->capture_default_str();

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Per-class AP and mAP");
  cmd_eval->add_option("--dets", ev.dets, "Detections JSONL")->required()->check(CLI::ExistingFile);
  cmd_eval->add_option("--gt", ev.gt, "Ground truth JSONL")->required()->check(CLI::ExistingFile);
  cmd_eval->add_option("--iou", ev.iou, "IoU matching threshold")->capture_default_str();
  cmd_eval->add_flag("--oracle-sorted", ev.oracle_sorted, "Rank by matched overlap instead of confidence");
  cmd_eval->add_flag("--csv", ev.csv, "CSV output");

  OfaCheckArgs ofa;
  auto* cmd_ofa = app.add_subcommand("ofa-check", "Numeric self-check of the OFA forward/backward pass");
  cmd_ofa->add_option("--seed", ofa.seed, "Random seed")->required();
  cmd_ofa->add_option("--n", ofa.n, "Number of proposals")->capture_default_str();
  cmd_ofa->add_option("--d", ofa.d, "Feature width (even)")->capture_default_str();
  cmd_ofa->add_option("--attn-dim", ofa.attn_dim, "Projection width (default D/2)");
  cmd_ofa->add_flag("--stop-gradient", ofa.stop_gradient, "Block gradients through the global feature");
  cmd_ofa->add_option("--reducer", ofa.reducer, "ofa | gcp")
      ->check(CLI::IsMember({"ofa", "gcp"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto selected = app.get_subcommands();
    std::cerr << (selected.empty() ? app.help() : selected.front()->help());
    return kExitError;
  }

  try {
    if (*cmd_synth) return run_synth(synth);
    if (*cmd_post) return run_postprocess(post);
    if (*cmd_eval) return run_eval(ev);
    if (*cmd_ofa) return run_ofa_check(ofa);
  } catch (const std::exception& e) {
    std::cerr << "seqdiou: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
