#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rigfit/corpus_io.hpp"
#include "rigfit/fitting.hpp"
#include "rigfit/mesh_io.hpp"
#include "rigfit/rig_io.hpp"
#include "rigfit/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rigfit;

namespace {

constexpr std::uint64_t kDefaultSeed = 1234;

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

// JSON config supplies defaults for options the user did not pass on the
// command line; explicit flags always win.
json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("bad config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold an object");
  return j;
}

template <typename T>
void config_default(const CLI::App& cmd, const json& cfg,
                    const std::string& flag, const std::string& key, T& out) {
  if (!cfg.contains(key)) return;
  const CLI::Option* opt = cmd.get_option_no_throw(flag);
  if (opt != nullptr && opt->count() > 0) return;  // flag wins
  try {
    out = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::vector<fs::path> expand_mesh_paths(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const std::string& raw : inputs) {
    const fs::path p(raw);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".obj") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  if (out.empty()) throw ConfigError("no target meshes found");
  return out;
}

std::vector<VertexMatrix> load_targets(const std::vector<std::string>& inputs,
                                       const Rig& rig) {
  std::vector<VertexMatrix> targets;
  for (const fs::path& p : expand_mesh_paths(inputs)) {
    Mesh m = load_mesh(p);
    if (m.vertex_count() != rig.mesh.vertex_count())
      throw ConfigError("target " + p.string() +
                        " does not match the rig's vertex count");
    targets.push_back(std::move(m.vertices));
  }
  return targets;
}

void write_report(const ErrorReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "mean " << format_double(r.mean) << "\n"
      << "rms " << format_double(r.rms) << "\n"
      << "max " << format_double(r.max) << "\n"
      << "stddev " << format_double(r.stddev) << "\n"
      << "count " << r.count << "\n";
}

void write_loss_log(const std::vector<double>& losses, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (double v : losses) out << format_double(v) << "\n";
}

// Small decoder/encoder/critic sizing for a rig-sized weight space.
DecoderConfig toy_decoder_config(int weight_params, int latent) {
  DecoderConfig cfg;
  cfg.latent_dim = latent;
  cfg.dense_dims = {std::max(2 * latent, 8), std::max(4 * latent, 16)};
  cfg.group_layers = {{weight_params, 1}};
  return cfg;
}

int run_make_toy(const ToyRigConfig& cfg, const std::string& out) {
  const Rig rig = make_toy_rig(cfg);
  save_rig(rig, out);
  log_line("make-toy: wrote rig with " +
           std::to_string(rig.mesh.vertex_count()) + " vertices, " +
           std::to_string(rig.skeleton.joint_count()) + " joints to " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint-based parametric face rig toolkit"};
  app.require_subcommand(1);

  try {
    // ---- make-toy ----
    auto* make_toy = app.add_subcommand("make-toy", "generate a toy rig");
    ToyRigConfig toy_cfg;
    std::string mt_out;
    make_toy->add_option("--out", mt_out, "output rig directory")->required();
    make_toy->add_option("--subdivision", toy_cfg.subdivision);
    make_toy->add_option("--joints", toy_cfg.joint_count);
    make_toy->add_option("--expressions", toy_cfg.expression_count);
    bool asymmetric = false;
    make_toy->add_flag("--asymmetric", asymmetric);
    make_toy->add_option("--seed", toy_cfg.seed);

    // ---- train-linear ----
    auto* train_linear =
        app.add_subcommand("train-linear", "stage-1 pose + weight fitting");
    std::string tl_rig, tl_out;
    std::vector<std::string> tl_targets;
    FitConfig tl_cfg;
    tl_cfg.stage1_pose_iters = 300;
    tl_cfg.stage1_weight_iters = 300;
    train_linear->add_option("--rig", tl_rig)->required();
    train_linear->add_option("--targets", tl_targets, "mesh files or directory")
        ->required();
    train_linear->add_option("--out", tl_out, "output rig directory")->required();
    train_linear->add_option("--cycles", tl_cfg.stage1_cycles);
    train_linear->add_option("--pose-iters", tl_cfg.stage1_pose_iters);
    train_linear->add_option("--weight-iters", tl_cfg.stage1_weight_iters);
    train_linear->add_option("--pose-lr", tl_cfg.stage1_pose_lr);
    train_linear->add_option("--weight-lr", tl_cfg.stage1_weight_lr);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "synthesize a skinning corpus");
    std::string sy_rig, sy_out, sy_config;
    std::vector<std::string> sy_targets;
    CorpusSpec sy_spec;
    FitConfig sy_fit;
    sy_fit.stage1_cycles = 2;
    sy_fit.stage1_pose_iters = 200;
    sy_fit.stage1_weight_iters = 200;
    std::uint64_t sy_seed = kDefaultSeed;
    int sy_weight_fit_iters = 400;
    synth->add_option("--rig", sy_rig)->required();
    synth->add_option("--targets", sy_targets)->required();
    synth->add_option("--out", sy_out)->required();
    synth->add_option("--config", sy_config, "JSON config with defaults");
    synth->add_option("--snapshots", sy_spec.snapshots_per_fit);
    synth->add_option("--cycles", sy_spec.cycles);
    synth->add_option("--perturb", sy_spec.perturb_copies);
    synth->add_option("--perturb-fraction", sy_spec.perturb_fraction);
    synth->add_option("--perturb-sparsity", sy_spec.perturb_sparsity);
    synth->add_option("--split-train", sy_spec.split_train);
    synth->add_option("--split-val", sy_spec.split_val);
    synth->add_option("--split-test", sy_spec.split_test);
    synth->add_option("--pose-iters", sy_fit.stage1_pose_iters);
    synth->add_option("--weight-iters", sy_fit.stage1_weight_iters);
    synth->add_option("--sample-iters", sy_weight_fit_iters);
    synth->add_option("--seed", sy_seed);

    // ---- train-neural ----
    auto* train_neural =
        app.add_subcommand("train-neural", "train the skinning decoder");
    std::string tn_rig, tn_corpus, tn_out;
    TrainSchedule tn_phase1, tn_phase2;
    tn_phase1.iterations = 400;
    tn_phase2.iterations = 200;
    tn_phase2.lr = 1e-4;
    int tn_latent = 8;
    bool tn_skip_gan = false;
    train_neural->add_option("--rig", tn_rig)->required();
    train_neural->add_option("--corpus", tn_corpus)->required();
    train_neural->add_option("--out", tn_out, "checkpoint path")->required();
    train_neural->add_option("--latent", tn_latent);
    train_neural->add_option("--iters", tn_phase1.iterations);
    train_neural->add_option("--gan-iters", tn_phase2.iterations);
    train_neural->add_option("--batch", tn_phase1.batch_size);
    train_neural->add_option("--lr", tn_phase1.lr);
    train_neural->add_option("--validation-bound", tn_phase1.validation_bound);
    train_neural->add_option("--seed", tn_phase1.seed);
    train_neural->add_flag("--skip-gan", tn_skip_gan);

    // ---- fit ----
    auto* fit = app.add_subcommand("fit", "test-time fitting");
    std::string ft_rig, ft_scan, ft_ckpt, ft_out, ft_mode = "scan";
    std::string ft_landmarks, ft_camera, ft_config;
    FitConfig ft_cfg;
    fit->add_option("--rig", ft_rig)->required();
    fit->add_option("--scan", ft_scan, "point cloud path (scan mode)");
    fit->add_option("--checkpoint", ft_ckpt, "decoder checkpoint (optional)");
    fit->add_option("--out", ft_out, "output directory")->required();
    fit->add_option("--mode", ft_mode)->check(CLI::IsMember({"scan", "landmarks"}));
    fit->add_option("--landmarks", ft_landmarks, "landmark file (index u v)");
    fit->add_option("--camera", ft_camera, "camera file (fx fy cx cy)");
    fit->add_option("--config", ft_config, "JSON config with defaults");
    fit->add_option("--pose-iters", ft_cfg.pose_iters);
    fit->add_option("--z-iters", ft_cfg.z_iters);
    fit->add_option("--expr-iters", ft_cfg.expr_iters);
    fit->add_option("--inner-cycles", ft_cfg.inner_cycles);
    fit->add_option("--outer-cycles", ft_cfg.outer_cycles);
    fit->add_option("--pose-lr", ft_cfg.pose_lr);
    fit->add_option("--z-lr", ft_cfg.z_lr);
    fit->add_option("--expr-lr", ft_cfg.expr_lr);
    fit->add_option("--refresh", ft_cfg.refresh_interval);
    fit->add_option("--lambda-m", ft_cfg.loss_weights.lambda_m);
    fit->add_option("--lambda-x", ft_cfg.loss_weights.lambda_x);
    fit->add_option("--lambda-p", ft_cfg.loss_weights.lambda_p);
    fit->add_option("--lambda-m-floor", ft_cfg.lambda_m_floor);
    fit->add_option("--icp-distance", ft_cfg.icp.max_distance);
    fit->add_option("--icp-angle", ft_cfg.icp.max_normal_angle_deg);
    fit->add_option("--seed", ft_cfg.seed);

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "error metrics");
    std::string ev_mesh, ev_ref, ev_out;
    eval->add_option("--mesh", ev_mesh)->required();
    eval->add_option("--ref", ev_ref, "reference mesh (.obj) or cloud")->required();
    eval->add_option("--out", ev_out, "report path (default stdout)");

    // ---- retarget ----
    auto* retarget_cmd = app.add_subcommand("retarget", "transfer a fit");
    std::string rt_rig, rt_fit, rt_out, rt_slots;
    bool rt_all_slots = false, rt_no_expr = false;
    retarget_cmd->add_option("--rig", rt_rig, "target rig directory")->required();
    retarget_cmd->add_option("--fit", rt_fit, "source fit result file")->required();
    retarget_cmd->add_option("--out", rt_out, "output mesh path")->required();
    retarget_cmd->add_option("--slots", rt_slots, "comma-separated pose slots");
    retarget_cmd->add_flag("--all-slots", rt_all_slots);
    retarget_cmd->add_flag("--no-expressions", rt_no_expr);

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int rc = app.exit(e);
      return rc == 0 ? 0 : 2;  // usage errors map to exit code 2
    }

    if (make_toy->parsed()) {
      toy_cfg.symmetric = !asymmetric;
      return run_make_toy(toy_cfg, mt_out);
    }

    if (train_linear->parsed()) {
      Rig rig = load_rig(tl_rig);
      const std::vector<VertexMatrix> targets = load_targets(tl_targets, rig);
      log_line("train-linear: " + std::to_string(targets.size()) + " targets, " +
               std::to_string(tl_cfg.stage1_cycles) + " cycles");
      const Stage1Result result = fit_stage1_linear(rig, targets, tl_cfg);
      fs::create_directories(tl_out);
      save_rig(rig, tl_out);
      write_loss_log(result.loss_log, fs::path(tl_out) / "loss_log.txt");
      log_line("train-linear: wrote rig + loss log to " + tl_out);
      return 0;
    }

    if (synth->parsed()) {
      const json cfg = load_config_file(sy_config);
      config_default(*synth, cfg, "--snapshots", "snapshots",
                     sy_spec.snapshots_per_fit);
      config_default(*synth, cfg, "--cycles", "cycles", sy_spec.cycles);
      config_default(*synth, cfg, "--perturb", "perturb", sy_spec.perturb_copies);
      config_default(*synth, cfg, "--perturb-fraction", "perturb_fraction",
                     sy_spec.perturb_fraction);
      config_default(*synth, cfg, "--perturb-sparsity", "perturb_sparsity",
                     sy_spec.perturb_sparsity);
      config_default(*synth, cfg, "--seed", "seed", sy_seed);

      Rig rig = load_rig(sy_rig);
      const std::vector<VertexMatrix> targets = load_targets(sy_targets, rig);
      sy_fit.snapshots_per_fit = sy_spec.snapshots_per_fit;
      sy_fit.stage1_cycles = sy_spec.cycles;
      const Stage1Result stage1 = fit_stage1_linear(rig, targets, sy_fit);
      log_line("synth: stage 1 produced " +
               std::to_string(stage1.snapshots.size()) + " base poses");

      Rng rng(sy_seed);
      Corpus corpus;
      corpus.spec = sy_spec;
      corpus.seed = sy_seed;
      corpus.poses = harvest_transform_corpus(stage1.snapshots, sy_spec, rng);
      corpus.targets.reserve(corpus.poses.size());
      for (const PoseSnapshot& p : corpus.poses)
        corpus.targets.push_back(
            targets[static_cast<std::size_t>(p.scan_index)]);

      WeightFitOptions wopt;
      wopt.max_iters = sy_weight_fit_iters;
      corpus.samples.resize(static_cast<long>(corpus.poses.size()),
                            rig.weights.class_count());
      std::vector<double> losses(corpus.poses.size(), 0.0);
      parallel_for(corpus.poses.size(), [&](std::size_t i) {
        const SkinningSample s = fit_weights_for_pose(
            rig, corpus.poses[i].pose, corpus.targets[i], wopt);
        corpus.samples.row(static_cast<long>(i)) = s.free_params.transpose();
        losses[i] = s.final_loss;
      });
      save_corpus(corpus, sy_out);
      write_loss_log(losses, fs::path(sy_out) / "sample_losses.txt");
      log_line("synth: wrote " + std::to_string(corpus.size()) +
               " samples to " + sy_out);
      return 0;
    }

    if (train_neural->parsed()) {
      Rig rig = load_rig(tn_rig);
      const Corpus corpus = load_corpus(tn_corpus);
      if (corpus.samples.rows() == 0)
        throw ConfigError("corpus has no fitted skinning samples");
      if (corpus.samples.cols() != rig.weights.class_count())
        throw ConfigError("corpus sample dim != rig weight params");
      const CorpusSplit split = corpus.split();
      auto take = [&](const std::vector<int>& rows) {
        Eigen::MatrixXd m(static_cast<long>(rows.size()), corpus.samples.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
          m.row(static_cast<long>(i)) = corpus.samples.row(rows[i]);
        return m;
      };
      const Eigen::MatrixXd train_rows = take(split.train);
      const Eigen::MatrixXd val_rows = take(split.val);

      Rng rng(tn_phase1.seed);
      const int dim = rig.weights.class_count();
      SkinDecoder decoder = SkinDecoder::create(
          toy_decoder_config(dim, tn_latent), rig.weights.free_params(), rng);
      EncoderConfig enc_cfg;
      enc_cfg.input_dim = dim;
      enc_cfg.latent_dim = tn_latent;
      enc_cfg.depth = 3;
      SkinEncoder encoder = SkinEncoder::create(enc_cfg, rng);
      CriticConfig crit_cfg;
      crit_cfg.input_dim = dim;
      crit_cfg.layer_dims = {32, 64, 16, 1};
      Critic critic = Critic::create(crit_cfg, rng);

      const TrainLogger logger = [](const TrainLogEntry& e) {
        log_line("step " + std::to_string(e.step) + " critic " +
                 std::to_string(e.critic_loss) + " gen " +
                 std::to_string(e.gen_loss) + " recon " +
                 std::to_string(e.recon_l1));
      };
      const double val = train_autoencoder_phase(decoder, encoder, critic,
                                                 train_rows, val_rows,
                                                 tn_phase1, logger);
      log_line("train-neural: phase 1 validation recon L1 " +
               std::to_string(val));
      if (!tn_skip_gan) {
        tn_phase2.batch_size = tn_phase1.batch_size;
        tn_phase2.seed = tn_phase1.seed + 1;
        finetune_decoder_gan_phase(decoder, critic, train_rows, tn_phase2,
                                   logger);
      }
      if (fs::path(tn_out).has_parent_path())
        fs::create_directories(fs::path(tn_out).parent_path());
      save_checkpoint(decoder, tn_out);
      log_line("train-neural: checkpoint written to " + tn_out);
      return 0;
    }

    if (fit->parsed()) {
      const json cfg = load_config_file(ft_config);
      config_default(*fit, cfg, "--pose-iters", "pose_iters", ft_cfg.pose_iters);
      config_default(*fit, cfg, "--z-iters", "z_iters", ft_cfg.z_iters);
      config_default(*fit, cfg, "--expr-iters", "expr_iters", ft_cfg.expr_iters);
      config_default(*fit, cfg, "--inner-cycles", "inner_cycles",
                     ft_cfg.inner_cycles);
      config_default(*fit, cfg, "--outer-cycles", "outer_cycles",
                     ft_cfg.outer_cycles);
      config_default(*fit, cfg, "--pose-lr", "pose_lr", ft_cfg.pose_lr);
      config_default(*fit, cfg, "--z-lr", "z_lr", ft_cfg.z_lr);
      config_default(*fit, cfg, "--expr-lr", "expr_lr", ft_cfg.expr_lr);
      config_default(*fit, cfg, "--refresh", "refresh_interval",
                     ft_cfg.refresh_interval);
      config_default(*fit, cfg, "--lambda-m", "lambda_m",
                     ft_cfg.loss_weights.lambda_m);
      config_default(*fit, cfg, "--lambda-x", "lambda_x",
                     ft_cfg.loss_weights.lambda_x);
      config_default(*fit, cfg, "--lambda-p", "lambda_p",
                     ft_cfg.loss_weights.lambda_p);
      config_default(*fit, cfg, "--lambda-m-floor", "lambda_m_floor",
                     ft_cfg.lambda_m_floor);
      config_default(*fit, cfg, "--icp-distance", "icp_max_distance",
                     ft_cfg.icp.max_distance);
      config_default(*fit, cfg, "--icp-angle", "icp_max_normal_angle",
                     ft_cfg.icp.max_normal_angle_deg);
      config_default(*fit, cfg, "--seed", "seed", ft_cfg.seed);

      const Rig rig = load_rig(ft_rig);
      fs::create_directories(ft_out);
      FitResult result;
      if (ft_mode == "landmarks") {
        if (ft_landmarks.empty() || ft_camera.empty())
          throw ConfigError("landmark mode needs --landmarks and --camera");
        std::ifstream lm(ft_landmarks);
        if (!lm) throw ConfigError("cannot open " + ft_landmarks);
        std::vector<int> indices;
        std::vector<double> us, vs;
        int idx;
        double u, v;
        while (lm >> idx >> u >> v) {
          indices.push_back(idx);
          us.push_back(u);
          vs.push_back(v);
        }
        Eigen::Matrix<double, Eigen::Dynamic, 2> targets(
            static_cast<long>(indices.size()), 2);
        for (std::size_t i = 0; i < indices.size(); ++i) {
          targets(static_cast<long>(i), 0) = us[i];
          targets(static_cast<long>(i), 1) = vs[i];
        }
        std::ifstream cam(ft_camera);
        if (!cam) throw ConfigError("cannot open " + ft_camera);
        PinholeCamera camera;
        if (!(cam >> camera.fx >> camera.fy >> camera.cx >> camera.cy))
          throw ConfigError("bad camera file " + ft_camera);
        result = fit_landmarks_2d(rig, indices, targets, camera, ft_cfg);
      } else {
        if (ft_scan.empty()) throw ConfigError("scan mode needs --scan");
        const PointCloud cloud = load_point_cloud(ft_scan);
        std::optional<SkinDecoder> decoder;
        if (!ft_ckpt.empty()) decoder = load_checkpoint(ft_ckpt);
        result = fit_test_time(rig, decoder ? &*decoder : nullptr, cloud,
                               ft_cfg);
      }
      save_fit_result(result, fs::path(ft_out) / "fit_result.txt");
      Mesh fitted = rig.mesh;
      fitted.vertices = result.fitted_vertices;
      save_mesh(fitted, fs::path(ft_out) / "fitted_mesh.obj");
      write_report(result.report, fs::path(ft_out) / "report.txt");
      log_line("fit: mean error " + std::to_string(result.report.mean));
      return 0;
    }

    if (eval->parsed()) {
      const Mesh fitted = load_mesh(ev_mesh);
      ErrorReport report;
      if (fs::path(ev_ref).extension() == ".obj")
        report = evaluate(fitted, load_mesh(ev_ref));
      else
        report = evaluate(fitted, load_point_cloud(ev_ref));
      if (ev_out.empty()) {
        std::cout << "mean " << format_double(report.mean) << "\nrms "
                  << format_double(report.rms) << "\nmax "
                  << format_double(report.max) << "\nstddev "
                  << format_double(report.stddev) << "\ncount " << report.count
                  << "\n";
      } else {
        write_report(report, ev_out);
      }
      return 0;
    }

    if (retarget_cmd->parsed()) {
      const Rig rig = load_rig(rt_rig);
      const FitResult source = load_fit_result(rt_fit);
      RetargetOptions options;
      options.transfer_expressions = !rt_no_expr;
      if (rt_all_slots) {
        for (int i = 0; i < rig.skeleton.free_dof_count(); ++i)
          options.transfer_slots.push_back(i);
      } else if (!rt_slots.empty()) {
        std::stringstream ss(rt_slots);
        std::string item;
        while (std::getline(ss, item, ','))
          options.transfer_slots.push_back(std::stoi(item));
      }
      Mesh out = rig.mesh;
      out.vertices = retarget(rig, source, options);
      if (fs::path(rt_out).has_parent_path())
        fs::create_directories(fs::path(rt_out).parent_path());
      save_mesh(out, rt_out);
      log_line("retarget: wrote " + rt_out);
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
