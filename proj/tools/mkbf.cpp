#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"
#include "mkbf/io.hpp"
#include "mkbf/microgrid.hpp"
#include "mkbf/pipeline.hpp"
#include "mkbf/predictor.hpp"

using namespace mkbf;
namespace fs = std::filesystem;
using Header = std::vector<std::pair<std::string, std::string>>;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string path_in(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

nlohmann::json complex_json(Complex c) { return {{"re", c.real()}, {"im", c.imag()}}; }

nlohmann::json scenario_json(const Scenario& sc) {
    auto events = nlohmann::json::array();
    for (const auto& e : sc.events)
        events.push_back({{"time", e.time},
                          {"target", e.target == Event::Target::Load ? "load" : "pq"},
                          {"index", e.index},
                          {"value", complex_json(e.value)}});
    auto loads = nlohmann::json::array();
    for (auto s : sc.initial.load_S) loads.push_back(complex_json(s));
    auto pqs = nlohmann::json::array();
    for (auto s : sc.initial.pq_S) pqs.push_back(complex_json(s));
    return {{"duration", sc.duration}, {"dt", sc.dt}, {"initial_load", loads},
            {"initial_pq", pqs},       {"events", events}};
}

void check_range(double range) {
    if (!(range > 0.0 && range <= 1.0))
        throw InvalidArgument("--range must lie in (0, 1], got " + std::to_string(range));
}

Header stamp(const std::string& hash, std::uint64_t seed) {
    return {{"config_hash", hash}, {"seed", std::to_string(seed)}};
}

// simulate ---------------------------------------------------------------------------------

struct SimulateArgs {
    RunConfig cfg;
};

int cmd_simulate(const SimulateArgs& a) {
    const auto& cfg = a.cfg;
    check_range(cfg.range);
    if (cfg.scenarios == 0) throw InvalidArgument("--scenarios must be positive");
    const auto sys_json = read_json(cfg.system_path);
    const SystemConfig sys = system_from_json(sys_json);
    GenerationOptions opt;
    opt.n_scenarios = cfg.scenarios;
    opt.range = cfg.range;
    opt.seed = cfg.seed;
    opt.augmentation = cfg.augmentation;
    opt.events = cfg.events;
    opt.duration = cfg.duration;
    const TrainingData data = generate_training_data(sys, opt);

    const std::string hash = config_hash(cfg, sys_json);
    nlohmann::json meta;
    meta["config_hash"] = hash;
    meta["seed"] = cfg.seed;
    meta["config"] = cfg.to_json();
    meta["n_scenarios"] = data.scenarios.size();
    auto scen = nlohmann::json::array();
    for (std::size_t i = 0; i < data.scenarios.size(); ++i) {
        auto j = scenario_json(data.scenarios[i]);
        j["seed"] = cfg.seed;
        j["stream"] = i;
        scen.push_back(std::move(j));
    }
    meta["scenarios"] = std::move(scen);
    write_dataset(cfg.output_dir, data, meta, stamp(hash, cfg.seed));
    std::cout << "wrote " << data.vf.segments.size() << " Vf and " << data.pq.segments.size()
              << " PQ segments from " << data.scenarios.size() << " scenarios to "
              << cfg.output_dir << "\n";
    return 0;
}

// train ------------------------------------------------------------------------------------

struct TrainArgs {
    RunConfig cfg;
    std::string data_dir;
    std::string validation_dir;
    std::vector<std::size_t> orders;
    std::size_t degree = 0;
    std::string truncation;
};

void write_trained(const TrainedModel& t, const std::string& dir, const std::string& stem,
                   const std::string& hash, std::uint64_t seed, const std::string& truncation) {
    nlohmann::json j = t.model;
    j["meta"] = {{"config_hash", hash},
                 {"seed", seed},
                 {"truncation", truncation},
                 {"numerical_rank", t.rank},
                 {"suggested_r", t.suggestion.r},
                 {"suggestion_flagged", t.suggestion.flagged}};
    if (!t.validation.empty()) {
        auto v = nlohmann::json::array();
        for (const auto& [r, e] : t.validation)
            v.push_back({{"r", r}, {"error", std::isfinite(e) ? nlohmann::json(e) : nlohmann::json()}});
        j["meta"]["validation"] = std::move(v);
    }
    write_json(path_in(dir, stem + "_model.json"), j);

    const KbfModel dense = dense_form(t.model);
    const Eigen::VectorXcd post = sort_continuous_spectrum(dense.A.eigenvalues(), dense.dt);
    write_long_csv(path_in(dir, stem + "_spectrum.csv"), spectrum_table(t.suggestion.spectrum, post),
                   stamp(hash, seed));
}

int cmd_train(TrainArgs a) {
    auto& cfg = a.cfg;
    if (a.degree) cfg.vf_degree = cfg.pq_degree = a.degree;
    if (!a.truncation.empty()) cfg.vf_truncation = cfg.pq_truncation = a.truncation;
    const DatasetFiles data = read_dataset(a.data_dir);
    cfg.seed = data.manifest.value("seed", std::uint64_t{0});
    std::unique_ptr<DatasetFiles> validation;
    if (!a.validation_dir.empty()) validation = std::make_unique<DatasetFiles>(read_dataset(a.validation_dir));

    nlohmann::json context = {{"dataset", data.manifest.value("config_hash", "")},
                              {"orders", a.orders}};
    if (validation) context["validation"] = validation->manifest.value("config_hash", "");
    const std::string hash = config_hash(cfg, context);

    std::vector<std::pair<std::size_t, std::size_t>> degrees;  // (vf, pq)
    if (a.orders.empty())
        degrees.emplace_back(cfg.vf_degree, cfg.pq_degree);
    else
        for (auto d : a.orders) degrees.emplace_back(d, d);

    for (const auto& [vd, pd] : degrees) {
        const std::string suffix = a.orders.empty() ? "" : "_d" + std::to_string(vd);
        TrainOptions vo;
        vo.kind = DerKind::Vf;
        vo.degree = vd;
        vo.form = parse_form(cfg.vf_form);
        vo.regression = parse_regression(cfg.regression);
        vo.truncation = parse_truncation(cfg.vf_truncation);
        const auto vf = train_model(data.vf, vo, validation ? &validation->vf : nullptr);
        write_trained(vf, cfg.output_dir, "vf" + suffix, hash, cfg.seed, cfg.vf_truncation);

        TrainOptions po = vo;
        po.kind = DerKind::Pq;
        po.degree = pd;
        po.form = parse_form(cfg.pq_form);
        po.truncation = parse_truncation(cfg.pq_truncation);
        const auto pq = train_model(data.pq, po, validation ? &validation->pq : nullptr);
        write_trained(pq, cfg.output_dir, "pq" + suffix, hash, cfg.seed, cfg.pq_truncation);

        std::printf("degree %zu/%zu  Vf: q=%zu rank=%zu suggested=%zu r=%zu residual=%.3e  "
                    "PQ: q=%zu rank=%zu suggested=%zu r=%zu residual=%.3e\n",
                    vd, pd, vf.model.q, vf.rank, vf.suggestion.r, vf.model.r, vf.model.residual,
                    pq.model.q, pq.rank, pq.suggestion.r, pq.model.r, pq.model.residual);
    }
    return 0;
}

// predict ----------------------------------------------------------------------------------

struct PredictArgs {
    RunConfig cfg;
    std::string vf_model;
    std::string pq_model;
    std::string models_dir;
    std::vector<std::size_t> orders;
    int events = -1;
};

Scenario build_scenario(const SystemConfig& sys, const RunConfig& cfg, int events) {
    GenerationOptions opt;
    opt.range = cfg.range;
    opt.seed = cfg.seed;
    opt.duration = cfg.horizon;
    opt.events = events > 0 ? static_cast<std::size_t>(events) : 0;
    Scenario sc = random_scenario(sys, opt, 0);
    if (events == 0) {
        sc.events.clear();
        sc.initial = nominal_operating_point(sys);
    }
    return sc;
}

struct OrderRun {
    std::string label;
    bool ok = false;
    std::string failure;
    EvaluationReport report;
};

OrderRun run_prediction(const SystemConfig& sys, const Scenario& sc, const SimulationResult& truth,
                        const std::string& vf_path, const std::string& pq_path,
                        const std::string& out_csv, const Header& header) {
    OrderRun run;
    const auto vf = std::make_shared<const KbfModel>(load_model(vf_path));
    const auto pq = std::make_shared<const KbfModel>(load_model(pq_path));
    try {
        const PredictionPlan plan = make_plan(sys, sc, state_at_start(truth, sys), vf, pq);
        const PredictionResult pred = predict(plan);
        run.report = evaluate(pred, truth);
        run.ok = true;
        write_long_csv(out_csv, port_table(pred.t, pred.port_nodes, pred.V, pred.I), header);
    } catch (const PredictionAbort& e) {
        run.failure = e.what();
    }
    return run;
}

nlohmann::json deterministic_metrics(const OrderRun& run) {
    if (!run.ok) return {{"diverged", true}, {"failure", run.failure}};
    nlohmann::json j = to_json(run.report);
    j.erase("wall_time_s");
    j.erase("simulation_time_s");
    j.erase("wall_time_ratio");
    j["diverged"] = false;
    return j;
}

int cmd_predict(PredictArgs a) {
    auto& cfg = a.cfg;
    check_range(cfg.range);
    const auto sys_json = read_json(cfg.system_path);
    const SystemConfig sys = system_from_json(sys_json);

    std::vector<std::pair<std::string, std::pair<std::string, std::string>>> jobs;
    if (a.orders.empty()) {
        if (a.vf_model.empty() || a.pq_model.empty())
            throw InvalidArgument("predict needs --vf-model and --pq-model, or --models with --orders");
        jobs.push_back({"", {a.vf_model, a.pq_model}});
    } else {
        for (auto d : a.orders) {
            const auto s = "_d" + std::to_string(d);
            jobs.push_back({std::to_string(d), {path_in(a.models_dir, "vf" + s + "_model.json"),
                                                path_in(a.models_dir, "pq" + s + "_model.json")}});
        }
    }
    // Fail on a missing model before the ground-truth simulation runs.
    nlohmann::json model_hashes = nlohmann::json::array();
    for (const auto& [label, paths] : jobs) {
        model_hashes.push_back(fnv1a_hex(read_text(paths.first)));
        model_hashes.push_back(fnv1a_hex(read_text(paths.second)));
    }
    const std::string hash = config_hash(
        cfg, {{"system", sys_json}, {"models", model_hashes}, {"events", a.events}});
    const Header header = stamp(hash, cfg.seed);

    const Scenario sc = build_scenario(sys, cfg, a.events);
    const SimulationResult truth = simulate_microgrid(sys, sc);
    write_long_csv(path_in(cfg.output_dir, "truth.csv"),
                   port_table(truth.t, truth.port_nodes, truth.V, truth.I), header);

    nlohmann::json metrics = {{"config_hash", hash}, {"seed", cfg.seed}, {"scenario", scenario_json(sc)}};
    nlohmann::json timing = {{"config_hash", hash}, {"simulation_time_s", truth.wall_time_s}};
    std::vector<OrderRun> runs;
    for (const auto& [label, paths] : jobs) {
        const std::string csv = label.empty() ? "prediction.csv" : "prediction_d" + label + ".csv";
        auto run = run_prediction(sys, sc, truth, paths.first, paths.second,
                                  path_in(cfg.output_dir, csv), header);
        run.label = label;
        if (label.empty()) {
            metrics["result"] = deterministic_metrics(run);
            timing["prediction_time_s"] = run.report.wall_time_s;
        } else {
            metrics["orders"][label] = deterministic_metrics(run);
            timing["prediction_time_s"][label] = run.report.wall_time_s;
        }
        runs.push_back(std::move(run));
    }
    write_json(path_in(cfg.output_dir, "metrics.json"), metrics);
    write_json(path_in(cfg.output_dir, "timing.json"), timing);

    std::printf("%-8s %-14s %-14s %-12s %-12s\n", "order", "mean_rms_pu", "max_err_pu", "predict_s",
                "simulate_s");
    for (const auto& run : runs) {
        const std::string label = run.label.empty() ? "-" : run.label;
        if (!run.ok) {
            std::printf("%-8s %-14s %-14s %-12s %-12.3f  (%s)\n", label.c_str(), "diverged", "-", "-",
                        truth.wall_time_s, run.failure.c_str());
            continue;
        }
        double mx = 0.0;
        for (const auto& n : run.report.per_node) mx = std::max(mx, n.max);
        std::printf("%-8s %-14.4e %-14.4e %-12.3f %-12.3f\n", label.c_str(), run.report.mean_rms, mx,
                    run.report.wall_time_s, truth.wall_time_s);
    }
    return 0;
}

// evaluate ---------------------------------------------------------------------------------

int cmd_evaluate(const std::string& truth_path, const std::string& pred_path, const std::string& out) {
    SimulationResult truth;
    PredictionResult pred;
    ports_from_table(read_long_csv(truth_path), truth.t, truth.port_nodes, truth.V, truth.I);
    ports_from_table(read_long_csv(pred_path), pred.t, pred.port_nodes, pred.V, pred.I);
    const EvaluationReport rep = evaluate(pred, truth);
    nlohmann::json j = to_json(rep);
    j.erase("wall_time_s");
    j.erase("simulation_time_s");
    j.erase("wall_time_ratio");
    j["truth_hash"] = fnv1a_hex(read_text(truth_path));
    j["prediction_hash"] = fnv1a_hex(read_text(pred_path));
    write_json(out, j);
    std::printf("mean RMS voltage error %.4e pu over %zu nodes\n", rep.mean_rms, rep.per_node.size());
    for (const auto& n : rep.per_node)
        std::printf("  node %zu  rms %.4e  max %.4e\n", n.node, n.rms, n.max);
    return 0;
}

// spectrum ---------------------------------------------------------------------------------

int cmd_spectrum(const std::string& model_path, const std::string& out) {
    const KbfModel model = load_model(model_path);
    const KbfModel dense = dense_form(model);
    const Eigen::VectorXcd spec = sort_continuous_spectrum(dense.A.eigenvalues(), dense.dt);
    LongTable table;
    const Eigen::VectorXd idx =
        Eigen::VectorXd::LinSpaced(spec.size(), 1.0, static_cast<double>(spec.size()));
    table.add("model_real", idx, spec.real());
    table.add("model_imag", idx, spec.imag());
    write_long_csv(out, table, {{"model_hash", fnv1a_hex(read_text(model_path))}});
    const auto sug = truncation_from_spectrum(spec);
    std::printf("%zu eigenvalues, repetition rule suggests r=%zu%s\n", static_cast<std::size_t>(spec.size()),
                sug.r, sug.flagged ? " (spectrum too short, flagged)" : "");
    if (sug.repeat_index)
        std::printf("first repeat: eigenvalue %zu ~ %zu + %zu\n", sug.repeat_index, sug.pair_i,
                    sug.pair_j);
    return 0;
}

void add_scenario_flags(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--system", cfg.system_path, "System JSON")->required();
    cmd->add_option("--range", cfg.range, "Disturbance range as a fraction of nominal");
    cmd->add_option("--seed", cfg.seed, "Random seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modular Koopman bilinear surrogates for inverter-based microgrids"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "Simulate random scenarios and write a training dataset");
    add_scenario_flags(c_sim, sim.cfg);
    c_sim->add_option("--scenarios", sim.cfg.scenarios, "Number of scenarios");
    c_sim->add_option("--augmentation", sim.cfg.augmentation, "Frame augmentation half-width, rad");
    c_sim->add_option("--events", sim.cfg.events, "Events per scenario (0: system default)");
    c_sim->add_option("--duration", sim.cfg.duration, "Scenario duration, s (0: system default)");
    c_sim->add_option("--out", sim.cfg.output_dir, "Output directory")->required();

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Identify Vf and PQ models from a dataset");
    c_tr->add_option("--data", tr.data_dir, "Dataset directory")->required();
    c_tr->add_option("--validation", tr.validation_dir, "Validation dataset for --truncation validate");
    c_tr->add_option("--degree", tr.degree, "Monomial degree for both DER types");
    c_tr->add_option("--vf-degree", tr.cfg.vf_degree);
    c_tr->add_option("--pq-degree", tr.cfg.pq_degree);
    c_tr->add_option("--orders", tr.orders, "Train one model pair per degree")->delimiter(',');
    c_tr->add_option("--truncation", tr.truncation, "auto | rank | validate | integer, both types");
    c_tr->add_option("--vf-truncation", tr.cfg.vf_truncation);
    c_tr->add_option("--pq-truncation", tr.cfg.pq_truncation);
    c_tr->add_option("--vf-form", tr.cfg.vf_form, "explicit | implicit");
    c_tr->add_option("--pq-form", tr.cfg.pq_form, "explicit | implicit");
    c_tr->add_option("--regression", tr.cfg.regression, "increment | snapshot");
    c_tr->add_option("--out", tr.cfg.output_dir, "Output directory")->required();

    PredictArgs pr;
    auto* c_pr = app.add_subcommand("predict", "Predict a scenario and compare with the simulator");
    add_scenario_flags(c_pr, pr.cfg);
    c_pr->add_option("--vf-model", pr.vf_model);
    c_pr->add_option("--pq-model", pr.pq_model);
    c_pr->add_option("--models", pr.models_dir, "Directory of vf_d<k>/pq_d<k> models for --orders");
    c_pr->add_option("--orders", pr.orders, "Compare several degrees")->delimiter(',');
    c_pr->add_option("--events", pr.events, "Events in the scenario (0: none, default: system)");
    c_pr->add_option("--horizon", pr.cfg.horizon, "Horizon, s (0: system default)");
    c_pr->add_option("--out", pr.cfg.output_dir, "Output directory")->required();

    std::string ev_truth, ev_pred, ev_out;
    auto* c_ev = app.add_subcommand("evaluate", "Voltage error between two port CSV files");
    c_ev->add_option("--truth", ev_truth)->required();
    c_ev->add_option("--prediction", ev_pred)->required();
    c_ev->add_option("--out", ev_out)->required();

    std::string sp_model, sp_out;
    auto* c_sp = app.add_subcommand("spectrum", "Continuous spectrum of a model");
    c_sp->add_option("--model", sp_model)->required();
    c_sp->add_option("--out", sp_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*c_sim) return cmd_simulate(sim);
        if (*c_tr) return cmd_train(tr);
        if (*c_pr) return cmd_predict(pr);
        if (*c_ev) return cmd_evaluate(ev_truth, ev_pred, ev_out);
        if (*c_sp) return cmd_spectrum(sp_model, sp_out);
    } catch (const MissingFileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
