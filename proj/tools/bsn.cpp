// Command-line front end: gen | cost | train | sweep | select | verify.
// Exit codes: 0 ok, 1 user error, 2 internal error (or failed verification).

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "bsn/acceptance.hpp"
#include "bsn/graph_io.hpp"

namespace {

using bsn::Json;

std::filesystem::path output_dir(const std::string& flag, const std::string& config_path) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("BSN_OUT_DIR");
  const std::filesystem::path base = env && *env ? env : "runs";
  return base / std::filesystem::path(config_path).stem();
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    bsn::write_text_file(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted super networks: generate, cost, train, sweep, select, verify"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Emit a serialized super network");
  std::string family = "dense", task = "classify", gen_out, path_mask_out;
  int groups = 3, width = 3, height = 6, filters = 0, classes = 10, toy_filters = 4;
  std::vector<int> widths{2, 16, 16, 2}, input_shape, toy_input_shape;
  bool toy = false;
  gen->add_option("--family", family, "dense | resnet_fabric | cnf | fork | twin_chain")->capture_default_str();
  gen->add_option("--groups", groups, "ResNet fabric groups k")->capture_default_str();
  gen->add_option("--width", width, "fabric width (ResNet n, CNF columns, or chain width)")->capture_default_str();
  gen->add_option("--height", height, "CNF scales")->capture_default_str();
  gen->add_option("--filters", filters, "CNF filters / ResNet base filters (default 128 / 16)");
  gen->add_option("--classes", classes, "output classes")->capture_default_str();
  gen->add_option("--task", task, "CNF task: classify | segment")->capture_default_str();
  gen->add_option("--widths", widths, "dense supernet layer widths")->capture_default_str();
  gen->add_option("--input-shape", input_shape, "C H W of the full-size input");
  gen->add_flag("--toy", toy, "toy scale (small filters and resolution, full-size cost metadata)");
  gen->add_option("--toy-filters", toy_filters, "filters at toy scale")->capture_default_str();
  gen->add_option("--toy-input-shape", toy_input_shape, "C H W at toy scale");
  gen->add_option("-o,--out", gen_out, "output file (default stdout)");
  gen->add_option("--path-mask", path_mask_out, "also write the plain ResNet path mask (resnet_fabric only)");

  // cost
  auto* cost = app.add_subcommand("cost", "Cost of a mask on a graph, as one JSON record");
  std::string graph_path, mask_arg = "full", kind = "flops", policy = "greedy", schedule_csv;
  int machines = 1;
  cost->add_option("--graph", graph_path, "serialized graph")->required();
  cost->add_option("--mask", mask_arg, "mask file or 'full'")->capture_default_str();
  cost->add_option("--kind", kind, "flops | params | distributed")->capture_default_str();
  cost->add_option("-n,--machines", machines, "machines for the distributed cost")->capture_default_str();
  cost->add_option("--policy", policy, "greedy | brute_force")->capture_default_str();
  cost->add_option("--schedule-csv", schedule_csv, "write the schedule as CSV (distributed only)");

  // train / sweep
  auto* train = app.add_subcommand("train", "Train one experiment from a JSON config");
  auto* sweep = app.add_subcommand("sweep", "Run a grid over budgets, lambdas and seeds");
  std::string config_path, out_flag;
  for (auto* sc : {train, sweep}) {
    sc->add_option("--config", config_path, "experiment config (JSON)")->required();
    sc->add_option("--out", out_flag, "output directory (default $BSN_OUT_DIR/<config name>, else runs/<config name>)");
  }

  // select
  auto* select = app.add_subcommand("select", "Pareto front of evaluation records");
  std::vector<std::string> record_files;
  std::string csv_out, plot_out;
  select->add_option("records", record_files, "models.jsonl / records.jsonl files")->required();
  select->add_option("--csv", csv_out, "front CSV (default stdout)");
  select->add_option("--plot", plot_out, "plot data file");

  // verify
  auto* verify = app.add_subcommand("verify", "Run the acceptance checks");
  std::vector<std::string> only;
  verify->add_option("--only", only, "criterion ids to run (1-7)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      Json spec{{"type", family}};
      if (family == "dense") {
        spec["widths"] = widths;
      } else if (family == "resnet_fabric" || family == "cnf") {
        if (family == "resnet_fabric") {
          spec["groups"] = groups;
          spec["width"] = width;
          if (filters) spec["base_filters"] = filters;
        } else {
          spec["width"] = width;
          spec["height"] = height;
          spec["task"] = task;
          if (filters) spec["filters"] = filters;
        }
        spec["num_classes"] = classes;
        spec["toy_scale"] = toy;
        spec["toy_filters"] = toy_filters;
        if (!input_shape.empty()) spec["input_shape"] = input_shape;
        if (!toy_input_shape.empty()) spec["toy_input_shape"] = toy_input_shape;
      } else {
        spec["width"] = width;
      }
      const bsn::SuperNetGraph g = bsn::make_graph(spec);
      emit(bsn::serialize_graph(g), gen_out);
      if (!path_mask_out.empty()) {
        if (family != "resnet_fabric") throw bsn::Error(bsn::Errc::InvalidConfig, "--path-mask needs --family resnet_fabric");
        bsn::ResNetFabricConfig c;
        c.groups = groups;
        c.width = width;
        bsn::write_text_file(path_mask_out, bsn::serialize_mask(g, bsn::resnet_path_mask(g, c)));
      }
      return 0;
    }
    if (*cost) {
      const bsn::SuperNetGraph g = bsn::parse_graph(bsn::read_text_file(graph_path));
      const bsn::Mask h = mask_arg == "full" ? bsn::Mask::full(g) : bsn::parse_mask(g, bsn::read_text_file(mask_arg));
      Json rec{{"kind", kind}};
      if (kind == "distributed") {
        if (policy != "greedy" && policy != "brute_force") throw bsn::Error(bsn::Errc::InvalidConfig, "--policy must be greedy or brute_force");
        const auto p = policy == "greedy" ? bsn::SchedulePolicy::GreedyList : bsn::SchedulePolicy::BruteForceOptimal;
        const bsn::Schedule s = bsn::distributed_cost(g, h, machines, p);
        rec["value"] = s.makespan;
        rec["unit"] = "cycles";
        rec["machines"] = machines;
        rec["policy"] = policy;
        if (!schedule_csv.empty()) bsn::write_text_file(schedule_csv, bsn::schedule_csv(g, s));
      } else if (kind == "flops") {
        rec["value"] = bsn::flops_cost(g, h);
        rec["unit"] = "mult-adds";
      } else if (kind == "params") {
        rec["value"] = bsn::params_cost(g, h);
        rec["unit"] = "params";
      } else {
        throw bsn::Error(bsn::Errc::InvalidConfig, "--kind must be flops, params or distributed");
      }
      rec["graph"] = graph_path;
      rec["mask"] = mask_arg;
      std::cout << rec.dump() << "\n";
      return 0;
    }
    if (*train) {
      const auto dir = output_dir(out_flag, config_path);
      const bsn::TrainResult r = bsn::cmd_train(bsn::load_config(config_path), dir);
      std::cout << r.log.records.back().dump() << "\n";
      std::cerr << "wrote " << dir.string() << "\n";
      return 0;
    }
    if (*sweep) {
      const auto dir = output_dir(out_flag, config_path);
      const bsn::SweepResult r = bsn::cmd_sweep(bsn::load_config(config_path), dir);
      std::cout << bsn::front_csv(r.front);
      std::cerr << "wrote " << dir.string() << " (" << r.records.size() << " of " << r.runs
                << " runs ended with a connected final model)\n";
      return 0;
    }
    if (*select) {
      std::vector<bsn::EvaluatedModel> all;
      for (const auto& f : record_files) {
        auto part = bsn::parse_models_jsonl(bsn::read_text_file(f));
        all.insert(all.end(), part.begin(), part.end());
      }
      const auto front = bsn::pareto_front(all);
      emit(bsn::front_csv(front), csv_out);
      if (!plot_out.empty()) bsn::write_text_file(plot_out, bsn::plot_data(all, front));
      return 0;
    }
    if (*verify) {
      bool all_pass = true;
      for (const auto& r : bsn::run_acceptance(bsn::AcceptanceOptions{}, only)) {
        std::cout << bsn::format_result(r) << std::flush;
        all_pass = all_pass && r.pass;
      }
      return all_pass ? 0 : 2;
    }
  } catch (const bsn::Error& e) {
    std::cerr << "error (" << bsn::errc_name(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
