// Command-line front end: train, translate, evaluate, cluster-report, make-synthetic.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "unitrans/checkpoint.hpp"
#include "unitrans/evaluation.hpp"
#include "unitrans/image_io.hpp"

using namespace unitrans;

namespace {

// Relative output paths land under $UNITRANS_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  const char* root = std::getenv("UNITRANS_OUTPUT_ROOT");
  fs::path path(p);
  if (root && *root && path.is_relative()) return fs::path(root) / path;
  return path;
}

ImageDataset load_data(const std::string& root, const TrainConfig& cfg) {
  if (root.empty())
    return make_synthetic({cfg.synthetic_domains, cfg.synthetic_samples, cfg.resolution, cfg.seed});
  return load_image_folder(root, cfg.resolution);
}

std::string stem(const std::string& name) { return fs::path(name).stem().string(); }

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out = "runs/train", resume, mode;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma_label;
};

int cmd_train(const TrainArgs& a) {
  // Precedence: preset or config file < --set < dedicated flags.
  TrainConfig cfg = a.config.empty() ? desk_preset() : parse_config(read_text(a.config));
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.data.empty()) cfg.data_root = a.data;
  if (!a.mode.empty()) cfg.mode = a.mode;
  if (a.seed) cfg.seed = *a.seed;
  if (a.gamma_label) cfg.gamma_label = *a.gamma_label;
  validate(cfg);

  const auto ds = load_data(cfg.data_root, cfg);
  const auto split = split_semi_supervised(ds, cfg.gamma_label, cfg.seed);
  BatchSampler sampler(ds, split, cfg.batch_size, cfg.gamma_label);
  if (ds.labeled() && ds.num_classes() != cfg.num_domains)
    std::cout << "note: dataset has " << ds.num_classes() << " classes, training with " << cfg.num_domains
              << " clusters\n";

  TrainState st = a.resume.empty() ? TrainState::create(cfg) : load_checkpoint(a.resume, &cfg);
  const auto out = output_path(a.out);
  fs::create_directories(out);
  std::ofstream(out / "config.toml") << config_to_text(cfg);
  std::ofstream log(out / "loss_log.tsv", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (a.resume.empty()) log << step_log_header() << "\taccuracy\n";

  std::cout << "training on " << ds.size() << " images (" << split.labeled.size() << " labeled), "
            << cfg.guiding_iters << " guiding + " << cfg.joint_iters << " joint iterations, mode " << cfg.mode
            << "\n";

  std::vector<Tensor<float>> e_at_boundary;
  auto snapshot_e = [&] {
    e_at_boundary.clear();
    for (const auto& p : st.E.params().params()) e_at_boundary.push_back(p.value());
  };
  if (st.iteration >= cfg.guiding_iters) snapshot_e();

  run_training(st, sampler, [&](const TrainState& s, const StepLog& l) {
    const auto it = s.iteration;  // iterations completed
    if (it == cfg.guiding_iters) snapshot_e();
    double acc = std::numeric_limits<double>::quiet_NaN();
    if (cfg.eval_every > 0 && ds.labeled() && (it % cfg.eval_every == 0 || s.finished())) {
      acc = cluster_accuracy(encode_dataset(s.inference_guiding(), ds).predicted, ds.labels());
      std::cout << "iter " << it << " cluster accuracy " << std::fixed << std::setprecision(4) << acc << '\n'
                << std::defaultfloat;
    }
    if ((cfg.log_every > 0 && it % cfg.log_every == 0) || s.finished() || !std::isnan(acc)) {
      auto row = l;
      row.iteration = it;
      log << step_log_row(row) << '\t' << (std::isnan(acc) ? std::string("nan") : std::to_string(acc)) << '\n';
      log.flush();
    }
    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0)
      save_checkpoint(s, (out / ("ckpt_" + std::to_string(it) + ".bin")).string());
    return true;
  });
  save_checkpoint(st, (out / "final.bin").string());

  if (cfg.train_mode() == TrainMode::sequential && !e_at_boundary.empty()) {
    double delta = 0;
    for (std::size_t i = 0; i < e_at_boundary.size(); ++i)
      for (std::int64_t j = 0; j < e_at_boundary[i].size(); ++j)
        delta = std::max(delta, static_cast<double>(std::abs(st.E.params().params()[i].value()[j] - e_at_boundary[i][j])));
    std::cout << "phase-2 guiding network parameter delta (max abs): " << delta << '\n';
  }
  std::cout << "wrote " << (out / "final.bin").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- translate

int cmd_translate(const std::string& ckpt, const std::string& source, const std::string& ref, const std::string& data,
                  const std::string& out_dir) {
  const auto st = load_checkpoint(ckpt);
  const auto& E = st.inference_guiding();
  const auto& G = st.inference_generator();
  const int res = st.cfg.resolution;
  const auto src = load_image_folder(source, res);

  Tensor<float> style_row;
  std::string ref_name;
  if (ref.rfind("cluster:", 0) == 0) {
    int id = -1;
    try {
      id = std::stoi(ref.substr(8));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse cluster id in '" + ref + "'");
    }
    if (id < 0 || id >= st.cfg.num_domains)
      throw ConfigError("unknown cluster id " + std::to_string(id) + " (model has " +
                        std::to_string(st.cfg.num_domains) + " clusters)");
    const auto pool = load_data(data, st.cfg);
    const auto enc = encode_dataset(E, pool);
    const auto avg = average_style(enc.style, enc.predicted, st.cfg.num_domains);
    const auto D = avg.dim(1);
    style_row = Tensor<float>({1, D}, std::vector<float>(avg.data() + id * D, avg.data() + (id + 1) * D));
    ref_name = "cluster" + std::to_string(id);
  } else {
    if (!fs::is_regular_file(ref)) throw DataError("reference image not found: " + ref);
    const auto image = read_image(ref, res);
    NoGrad guard;
    style_row = E.encode(stack_images({&image})).style.value();
    ref_name = stem(ref);
  }

  const auto out = output_path(out_dir);
  fs::create_directories(out);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto x = src.batch({i});
    const auto y = translate(G, x, style_row);
    const auto file = out / (stem(src.records[i].name) + "__" + ref_name + ".png");
    write_png(image_at(y, 0), file.string());
    double l1 = 0;
    for (std::int64_t j = 0; j < y.size(); ++j) l1 += std::abs(y[j] - x[j]);
    std::cout << file.string() << "\tl1_to_source=" << l1 / static_cast<double>(y.size()) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const std::vector<std::string>& ckpts, const std::string& data, const std::string& report,
                 const EvalOptions& opt, const std::string& out_file) {
  if (report != "all" && report != "best5") throw ConfigError("--report must be 'all' or 'best5'");
  const auto embedder = make_stub_embedder();
  std::vector<double> mfids;
  std::ostringstream tsv;
  tsv << "checkpoint\titeration\taccuracy\tmfid\tdensity\tcoverage\tioi\n";
  std::optional<ImageDataset> ds;
  for (const auto& path : ckpts) {
    const auto st = load_checkpoint(path);
    if (!ds) ds = load_data(data, st.cfg);
    const auto r = evaluate_model(st.inference_guiding(), st.inference_generator(), *ds, embedder, opt);
    for (const auto& n : r.notices) std::cout << "notice: " << n << '\n';
    std::cout << path << " (iteration " << st.iteration << ")\n";
    if (r.labeled) {
      std::cout << "  cluster_accuracy " << r.accuracy << '\n' << "  mfid " << r.mfid.mfid << '\n';
      for (std::size_t c = 0; c < r.mfid.per_class.size(); ++c)
        std::cout << "  fid[" << ds->class_names[c] << "] " << r.mfid.per_class[c] << '\n';
      mfids.push_back(r.mfid.mfid);
    }
    std::cout << "  density " << r.dc.density << "\n  coverage " << r.dc.coverage << '\n'
              << "  ioi " << r.ioi.value << (r.ioi.degenerate ? " (degenerate)" : "") << '\n';
    tsv << path << '\t' << st.iteration << '\t' << r.accuracy << '\t' << (r.labeled ? r.mfid.mfid : std::numeric_limits<double>::quiet_NaN()) << '\t'
        << r.dc.density << '\t' << r.dc.coverage << '\t' << r.ioi.value << '\n';
  }
  if (report == "best5") {
    if (mfids.empty()) std::cout << "notice: best5 needs labeled data; skipped\n";
    else std::cout << "best5_mfid " << mean_of_best(mfids, 5) << " over " << mfids.size() << " checkpoints\n";
  }
  if (!out_file.empty()) {
    const auto p = output_path(out_file);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream(p) << tsv.str();
  }
  return 0;
}

// ---------------------------------------------------------------- cluster-report

int cmd_cluster_report(const std::string& ckpt, const std::string& data, const std::string& out_dir, int per_row) {
  const auto st = load_checkpoint(ckpt);
  const auto ds = load_data(data, st.cfg);
  const auto enc = encode_dataset(st.inference_guiding(), ds);
  const auto out = output_path(out_dir);
  fs::create_directories(out);
  const auto labels = ds.labeled() ? ds.labels() : std::vector<int>{};
  export_embeddings(enc.style, enc.predicted, ds.labeled() ? &labels : nullptr, (out / "embeddings.tsv").string());

  const int K = st.cfg.num_domains;
  std::vector<std::vector<Tensor<float>>> rows(K);
  std::vector<int> sizes(K, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int k = enc.predicted[i];
    ++sizes[k];
    if (static_cast<int>(rows[k].size()) < per_row) rows[k].push_back(ds.records[i].image);
  }
  write_png(montage(rows, ds.resolution, ds.resolution), (out / "clusters.png").string());
  for (int k = 0; k < K; ++k) std::cout << "cluster " << k << ": " << sizes[k] << " images\n";
  if (ds.labeled()) std::cout << "cluster_accuracy " << cluster_accuracy(enc.predicted, labels) << '\n';
  std::cout << "wrote " << (out / "embeddings.tsv").string() << " and " << (out / "clusters.png").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- make-synthetic

int cmd_make_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  const auto ds = make_synthetic(spec);
  const auto out = output_path(out_dir);
  save_image_folder(ds, out.string());
  std::cout << "wrote " << ds.size() << " images in " << ds.num_classes() << " folders under " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised multi-domain image-to-image translation"};
  app.require_subcommand(1);
  app.footer("Relative output paths are placed under $UNITRANS_OUTPUT_ROOT when it is set.");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the guiding network, generator and discriminator");
  train->add_option("--config", ta.config, "key = value config file (default: the desk preset)");
  train->add_option("--set", ta.sets, "Override one config key, key=value (repeatable)");
  train->add_option("--data", ta.data, "Image folder (class subfolders or flat); synthetic data when omitted");
  train->add_option("--mode", ta.mode, "joint or sequential")->check(CLI::IsMember({"joint", "sequential"}));
  train->add_option("--gamma-label", ta.gamma_label, "Labeled fraction for semi-supervised training");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--out", ta.out, "Output directory")->capture_default_str();
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");

  std::string ckpt, source, ref, data, out_dir = "runs/translate";
  auto* tr = app.add_subcommand("translate", "Translate images with a reference image or a cluster's average style");
  tr->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  tr->add_option("--source", source, "Folder of source images")->required();
  tr->add_option("--ref", ref, "Reference image path or cluster:<id>")->required();
  tr->add_option("--data", data, "Dataset for cluster average styles (synthetic from the checkpoint config if omitted)");
  tr->add_option("--out", out_dir, "Output directory")->capture_default_str();

  std::vector<std::string> ckpts;
  std::string eval_data, report = "all", eval_out;
  EvalOptions eopt;
  auto* ev = app.add_subcommand("evaluate", "Cluster accuracy, mFID, density & coverage and IOI");
  ev->add_option("--checkpoint", ckpts, "Checkpoint file(s)")->required();
  ev->add_option("--data", eval_data, "Evaluation images (synthetic from the checkpoint config if omitted)");
  ev->add_option("--report", report, "all, or best5 for the mean of the five best mFIDs")->capture_default_str();
  ev->add_option("--n-refs", eopt.n_refs, "References per source image")->capture_default_str();
  ev->add_option("--per-class", eopt.per_class, "Sources per non-target class")->capture_default_str();
  ev->add_option("--seed", eopt.seed, "Sampling seed")->capture_default_str();
  ev->add_option("--out", eval_out, "Also write a TSV report here");

  std::string cr_ckpt, cr_data, cr_out = "runs/clusters";
  int per_row = 8;
  auto* cr = app.add_subcommand("cluster-report", "Embedding TSV and per-cluster sample grid");
  cr->add_option("--checkpoint", cr_ckpt, "Checkpoint file")->required();
  cr->add_option("--data", cr_data, "Images to embed (synthetic from the checkpoint config if omitted)");
  cr->add_option("--out", cr_out, "Output directory")->capture_default_str();
  cr->add_option("--per-cluster", per_row, "Samples shown per cluster")->capture_default_str();

  SyntheticSpec sspec;
  std::string syn_out = "data/synthetic";
  auto* ms = app.add_subcommand("make-synthetic", "Write the synthetic colour-domain dataset as class folders");
  ms->add_option("--k", sspec.num_domains, "Number of domains")->capture_default_str();
  ms->add_option("--n", sspec.samples, "Total number of images")->capture_default_str();
  ms->add_option("--res", sspec.resolution, "Image side length")->capture_default_str();
  ms->add_option("--seed", sspec.seed, "Random seed")->capture_default_str();
  ms->add_option("--out", syn_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*tr) return cmd_translate(ckpt, source, ref, data, out_dir);
    if (*ev) return cmd_evaluate(ckpts, eval_data, report, eopt, eval_out);
    if (*cr) return cmd_cluster_report(cr_ckpt, cr_data, cr_out, per_row);
    if (*ms) return cmd_make_synthetic(sspec, syn_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
