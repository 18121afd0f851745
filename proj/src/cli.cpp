#include "tdpfed/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "tdpfed/checkpoint.hpp"
#include "tdpfed/config.hpp"
#include "tdpfed/errors.hpp"
#include "tdpfed/gradcheck.hpp"
#include "tdpfed/reference_models.hpp"
#include "tdpfed/simulator.hpp"

namespace tdpfed {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
  SimConfig config = load_config(config_path);
  if (const std::size_t env = threads_from_env(); env != 0) config.threads = env;
  config.validate();

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  {
    // The worker count does not affect results, so the echo records the
    // configured value rather than the environment override.
    SimConfig echo = load_config(config_path);
    std::ofstream cfg(fs::path(out_dir) / "config.resolved.ini");
    if (!cfg) throw IoError("cannot write resolved config in '" + out_dir + "'");
    cfg << serialize_config(echo);
  }

  const fs::path metrics_path = fs::path(out_dir) / "metrics.csv";
  std::ofstream csv(metrics_path, std::ios::binary);
  if (!csv) throw IoError("cannot write '" + metrics_path.string() + "'");
  csv << metrics_csv_header() << "\n" << std::flush;

  const SimResult result = run(config, [&](const RoundMetrics& m) {
    csv << metrics_csv_row(m) << "\n" << std::flush;
    out << "round " << m.round << "  acc_personalized " << fixed(m.acc_personalized_mean, 4)
        << "  acc_global " << fixed(m.acc_global, 4) << "  loss " << fixed(m.loss_train_mean, 4)
        << "\n";
  });
  if (!csv) throw IoError("write failed for '" + metrics_path.string() + "'");
  write_checkpoint((fs::path(out_dir) / "final.tdpf").string(), result.global);
  out << "wrote " << metrics_path.string() << "\n";
  return kExitOk;
}

int cmd_check_grad(std::uint64_t seed, std::size_t modes, std::size_t rank, bool flip,
                   std::ostream& out) {
  GradCheckOptions opt;
  opt.seed = seed;
  opt.flip_theta_sign = flip;
  std::vector<GradCheckCase> cases;
  const std::vector<std::size_t> mode_list =
      modes ? std::vector<std::size_t>{modes} : std::vector<std::size_t>{2, 4};
  const std::vector<std::size_t> rank_list =
      rank ? std::vector<std::size_t>{rank} : std::vector<std::size_t>{1, 2, 3};
  for (auto n : mode_list)
    for (auto r : rank_list) cases.push_back(check_factor_gradient(n, r, opt));
  cases.push_back(check_backprop(opt));

  bool ok = true;
  for (const auto& c : cases) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s coords=%-4zu max_rel_error=%.3e  %s", c.name.c_str(),
                  c.coordinates, c.max_rel_error, c.passed() ? "ok" : "FAIL");
    out << buf << "\n";
    for (const auto& o : c.offending) out << "    " << o << "\n";
    ok = ok && c.passed();
  }
  return ok ? kExitOk : kExitFailure;
}

int cmd_plan_ranks(const std::string& model, double cr, std::ostream& out) {
  const auto rows = plan_ranks(model, cr);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %-14s %6s %8s", "layer", "dims", "rank", "cr");
  out << buf << "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %-14s %6zu %8.4f", r.layer.c_str(), r.dims.c_str(),
                  r.rank, r.achieved_cr);
    out << buf << "\n";
  }
  return kExitOk;
}

void describe(const TensorizedModel& m, std::ostream& out) {
  out << "layers " << m.layers.size() << "\n";
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    out << "  " << l << ": " << to_string(layer.kind) << " extents";
    for (auto e : layer.factors.target_shape()) out << " " << e;
    out << " rank " << layer.factors.rank() << " params "
        << layer.factors.parameter_count() + layer.bias.size() << "\n";
  }
  out << "uplink reals " << m.parameter_count() << "\n";
}

int cmd_export(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  const SimConfig config = load_config(config_path);
  config.validate();
  const TensorizedModel m = init_global(config.model, derive_seed(config.seed, "global"));
  write_checkpoint(out_path, m);
  describe(m, out);
  out << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_import(const std::string& in_path, const std::string& out_path, std::ostream& out) {
  const TensorizedModel m = read_checkpoint(in_path);
  describe(m, out);
  if (!out_path.empty()) {
    write_checkpoint(out_path, m);
    out << "wrote " << out_path << "\n";
  }
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tensor-decomposition personalized federated learning simulator", "tdpfed"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* run_cmd = app.add_subcommand("run", "run a federated experiment");
  run_cmd->add_option("--config", config_path, "experiment config file")->required();
  run_cmd->add_option("--out", out_dir, "output directory")->required();

  std::uint64_t seed = 1;
  std::size_t modes = 0, rank = 0;
  bool flip = false;
  auto* grad_cmd = app.add_subcommand("check-grad", "finite-difference gradient checks");
  grad_cmd->add_option("--seed", seed, "random seed");
  grad_cmd->add_option("--modes", modes, "tensor order (default: 2 and 4)");
  grad_cmd->add_option("--rank", rank, "CP rank (default: 1, 2 and 3)");
  grad_cmd->add_flag("--inject-sign-flip", flip)->group("");  // test hook

  std::string model;
  double cr = 2.0;
  auto* plan_cmd = app.add_subcommand("plan-ranks", "CP ranks for a target compression rate");
  plan_cmd->add_option("--model", model, "dnn or vgg8")->required();
  plan_cmd->add_option("--cr", cr, "target compression rate")->required();

  std::string export_config, export_out;
  auto* export_cmd = app.add_subcommand("export", "write the initial global model checkpoint");
  export_cmd->add_option("--config", export_config, "experiment config file")->required();
  export_cmd->add_option("--out", export_out, "checkpoint path")->required();

  std::string import_in, import_out;
  auto* import_cmd = app.add_subcommand("import", "read and validate a checkpoint");
  import_cmd->add_option("--in", import_in, "checkpoint path")->required();
  import_cmd->add_option("--out", import_out, "optional path to re-export to");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(config_path, out_dir, out);
    if (*grad_cmd) return cmd_check_grad(seed, modes, rank, flip, out);
    if (*plan_cmd) return cmd_plan_ranks(model, cr, out);
    if (*export_cmd) return cmd_export(export_config, export_out, out);
    if (*import_cmd) return cmd_import(import_in, import_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace tdpfed
