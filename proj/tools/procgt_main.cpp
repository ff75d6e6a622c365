#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "procgt/errors.hpp"
#include "procgt/evaluation.hpp"
#include "procgt/eventlog.hpp"
#include "procgt/graphbuild.hpp"
#include "procgt/manifest.hpp"
#include "procgt/model.hpp"
#include "procgt/prefixing.hpp"
#include "procgt/synthlog.hpp"
#include "procgt/timeutil.hpp"
#include "procgt/training.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;
using namespace procgt;

namespace {

struct CommonOpts {
    std::string log_path;
    std::string schema_path;
    std::string format = "csv";
    std::string out_dir = "out";
    std::string split_mode = "cv";
    double folds = 5;
    double val_fraction = 0.2;
    std::uint64_t seed = 7;
    int fold = 0;
    std::string profile = "desk";
    std::string config_path;
    std::string seeds_csv;

    std::optional<std::size_t> hidden, layers, heads, d_pe, d_se, edge_encoder_layers;
    std::optional<double> mpnn_dropout, attn_dropout;
    std::optional<std::string> readout;
    bool literal_equations = false;
    std::optional<std::size_t> epochs, warmup, batch_size, patience;
    std::optional<double> lr, weight_decay;
};

std::string now_iso() {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count();
    return format_iso8601(static_cast<TimestampMs>(ms));
}

EventLog load_log(const CommonOpts& o) {
    if (o.log_path.empty()) throw Error(ErrorKind::Usage, "--log is required");
    EventLog log;
    if (o.format == "xes") {
        log = parse_xes(o.log_path);
    } else if (o.format == "csv") {
        CsvMapping mapping;
        std::ifstream in(o.log_path, std::ios::binary);
        if (!in) throw Error(ErrorKind::Io, "cannot open " + o.log_path);
        std::string header;
        std::getline(in, header);
        if (header.find("lifecycle") != std::string::npos) mapping.lifecycle_column = "lifecycle";
        AttributeSchema schema;
        if (!o.schema_path.empty()) schema = load_schema_json(o.schema_path);
        log = parse_csv(o.log_path, mapping, schema);
    } else {
        throw Error(ErrorKind::Usage, "--format must be csv or xes");
    }
    log = filter_short_traces(log);
    if (log.traces.empty())
        throw Error(ErrorKind::EmptyLog, "no trace with at least 3 events remains");
    return log;
}

SplitPlan obtain_split(const EventLog& log, const CommonOpts& o, const fs::path& out,
                       RunManifest& manifest) {
    const fs::path split_file = out / "split.json";
    if (fs::exists(split_file)) {
        manifest.input_hashes.emplace_back(split_file.string(), hash_file(split_file.string()));
        return load_split_plan(split_file.string());
    }
    const SplitMode mode =
        o.split_mode == "holdout" ? SplitMode::Holdout : SplitMode::CrossValidation;
    if (o.split_mode != "holdout" && o.split_mode != "cv")
        throw Error(ErrorKind::Usage, "--split must be cv or holdout");
    SplitPlan plan = make_split(log, mode, o.folds, o.seed, o.val_fraction);
    save_split_plan(plan, split_file.string());
    return plan;
}

void apply_profile(const std::string& profile, ModelConfig& mc, TrainConfig& tc) {
    if (profile == "paper") return; // compiled-in defaults
    if (profile == "desk") {
        mc.hidden_dim = 32;
        mc.num_layers = 3;
        mc.num_heads = 4;
        tc.epochs = 300;
        tc.warmup_epochs = 25;
        tc.batch_size = 32;
        return;
    }
    throw Error(ErrorKind::Usage, "--profile must be paper or desk");
}

void overlay_model(ModelConfig& c, const Json& j) {
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.d_pe = j.value("d_pe", c.d_pe);
    c.d_se = j.value("d_se", c.d_se);
    c.edge_encoder_layers = j.value("edge_encoder_layers", c.edge_encoder_layers);
    c.mpnn_dropout = j.value("mpnn_dropout", c.mpnn_dropout);
    c.attn_dropout = j.value("attn_dropout", c.attn_dropout);
    if (j.contains("readout"))
        c.readout = j.at("readout").get<std::string>() == "sum" ? Readout::Sum : Readout::Mean;
    c.residual_and_norm = j.value("residual_and_norm", c.residual_and_norm);
    c.seed = j.value("seed", c.seed);
}

void overlay_train(TrainConfig& c, const Json& j) {
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
}

// profile defaults, then config file, then explicit flags
std::pair<ModelConfig, TrainConfig> resolve_configs(const CommonOpts& o) {
    ModelConfig mc;
    TrainConfig tc;
    apply_profile(o.profile, mc, tc);
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path, std::ios::binary);
        if (!in) throw Error(ErrorKind::Io, "cannot open " + o.config_path);
        Json j;
        try {
            in >> j;
        } catch (const Json::exception& e) {
            throw Error(ErrorKind::Io, std::string("bad config file: ") + e.what());
        }
        if (j.contains("model")) overlay_model(mc, j.at("model"));
        if (j.contains("train")) overlay_train(tc, j.at("train"));
    }
    if (o.hidden) mc.hidden_dim = *o.hidden;
    if (o.layers) mc.num_layers = *o.layers;
    if (o.heads) mc.num_heads = *o.heads;
    if (o.d_pe) mc.d_pe = *o.d_pe;
    if (o.d_se) mc.d_se = *o.d_se;
    if (o.edge_encoder_layers) mc.edge_encoder_layers = *o.edge_encoder_layers;
    if (o.mpnn_dropout) mc.mpnn_dropout = *o.mpnn_dropout;
    if (o.attn_dropout) mc.attn_dropout = *o.attn_dropout;
    if (o.readout) mc.readout = *o.readout == "sum" ? Readout::Sum : Readout::Mean;
    if (o.literal_equations) mc.residual_and_norm = false;
    if (o.epochs) tc.epochs = *o.epochs;
    if (o.warmup) tc.warmup_epochs = *o.warmup;
    if (o.batch_size) tc.batch_size = *o.batch_size;
    if (o.patience) tc.early_stop_patience = *o.patience;
    if (o.lr) tc.base_lr = *o.lr;
    if (o.weight_decay) tc.weight_decay = *o.weight_decay;
    mc.seed = o.seed;
    tc.seed = o.seed;
    return {mc, tc};
}

std::vector<std::uint64_t> parse_seeds(const CommonOpts& o) {
    if (o.seeds_csv.empty()) return {o.seed};
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(o.seeds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            seeds.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw Error(ErrorKind::Usage, "bad --seeds entry: " + tok);
        }
    }
    if (seeds.empty()) throw Error(ErrorKind::Usage, "--seeds parsed to nothing");
    return seeds;
}

RunManifest start_manifest(const std::string& command, const CommonOpts& o,
                           const Json& config_echo) {
    RunManifest m;
    m.command = command;
    m.config_hash = fnv1a_hex(config_echo.dump());
    if (!o.log_path.empty()) m.input_hashes.emplace_back(o.log_path, hash_file(o.log_path));
    if (!o.schema_path.empty())
        m.input_hashes.emplace_back(o.schema_path, hash_file(o.schema_path));
    m.seed = o.seed;
    m.created_at = now_iso();
    return m;
}

Json flags_echo(const CommonOpts& o) {
    return Json{{"format", o.format},   {"split", o.split_mode},
                {"folds", o.folds},     {"val_fraction", o.val_fraction},
                {"fold", o.fold},       {"profile", o.profile},
                {"seed", o.seed},       {"seeds", o.seeds_csv}};
}

fs::path ensure_out(const CommonOpts& o) {
    fs::path out(o.out_dir);
    fs::create_directories(out);
    return out;
}

int cmd_synth(const CommonOpts& o, const SynthConfig& synth) {
    const fs::path out = ensure_out(o);
    SynthConfig cfg = synth;
    cfg.seed = o.seed;
    EventLog log = make_synthetic_log(cfg);
    write_canonical_csv(log, (out / "log.csv").string());
    Json schema = {{"attributes", {{"amount", {{"kind", "numeric"}, {"scope", "case"}}}}}};
    {
        std::ofstream sf(out / "schema.json", std::ios::binary);
        if (!sf) throw Error(ErrorKind::Io, "cannot write schema.json");
        sf << schema.dump(2) << '\n';
    }
    Json echo = {{"traces", cfg.traces},
                 {"trace_length", cfg.trace_length},
                 {"fast_gap_seconds", cfg.fast_gap_seconds},
                 {"slow_gap_seconds", cfg.slow_gap_seconds},
                 {"start_stagger_seconds", cfg.start_stagger_seconds},
                 {"seed", cfg.seed}};
    RunManifest m = start_manifest("synth", o, echo);
    save_manifest(m, (out / "manifest.json").string());
    const LogStatistics st = log_statistics(log);
    std::cout << "wrote " << (out / "log.csv").string() << ": " << st.cases << " cases, "
              << st.events << " events, " << st.event_classes << " event classes\n";
    return 0;
}

int cmd_convert(const CommonOpts& o) {
    const fs::path out = ensure_out(o);
    EventLog log = load_log(o);
    RunManifest m = start_manifest("convert", o, flags_echo(o));
    SplitPlan plan = obtain_split(log, o, out, m);
    if (o.fold < 0 || o.fold >= plan.fold_count())
        throw Error(ErrorKind::Usage, "--fold outside the split plan");
    const auto records = build_prefixes(log);
    FoldSets sets = materialize_fold(records, plan, o.fold);
    NormalizationStats stats = fit_stats(sets.train, log);
    const auto graphs = build_dataset(records, log, stats);
    write_dataset(graphs, (out / "dataset.jsonl").string());
    save_stats(stats, (out / "stats.json").string());
    save_manifest(m, (out / "manifest.json").string());
    std::cout << "wrote " << graphs.size() << " graphs to " << (out / "dataset.jsonl").string()
              << " (stats from fold " << o.fold << ": " << sets.train.size()
              << " training prefixes)\n";
    return 0;
}

int cmd_split(const CommonOpts& o) {
    const fs::path out = ensure_out(o);
    EventLog log = load_log(o);
    const SplitMode mode =
        o.split_mode == "holdout" ? SplitMode::Holdout : SplitMode::CrossValidation;
    if (o.split_mode != "holdout" && o.split_mode != "cv")
        throw Error(ErrorKind::Usage, "--split must be cv or holdout");
    SplitPlan plan = make_split(log, mode, o.folds, o.seed, o.val_fraction);
    save_split_plan(plan, (out / "split.json").string());
    RunManifest m = start_manifest("split", o, flags_echo(o));
    save_manifest(m, (out / "manifest.json").string());
    std::cout << "wrote split plan for " << plan.assignment.size() << " cases ("
              << plan.fold_count() << " folds)\n";
    return 0;
}

int cmd_train(const CommonOpts& o) {
    const fs::path out = ensure_out(o);
    EventLog log = load_log(o);
    auto [mc, tc] = resolve_configs(o);
    Json echo = flags_echo(o);
    echo["model"] = Json::parse(model_config_to_json(mc));
    echo["train"] = Json::parse(train_config_to_json(tc));
    RunManifest m = start_manifest("train", o, echo);
    SplitPlan plan = obtain_split(log, o, out, m);
    if (o.fold < 0 || o.fold >= plan.fold_count())
        throw Error(ErrorKind::Usage, "--fold outside the split plan");
    const auto records = build_prefixes(log);
    FoldSets sets = materialize_fold(records, plan, o.fold);
    NormalizationStats stats = fit_stats(sets.train, log);
    const auto train_graphs = build_dataset(sets.train, log, stats);
    const auto val_graphs = build_dataset(sets.validation, log, stats);
    TrainedModel model = train_model(train_graphs, val_graphs, stats, mc, tc);
    save_stats(stats, (out / "stats.json").string());
    write_metrics_csv(model.curve, (out / "metrics.csv").string(), m.hash());
    save_checkpoint(model.params, model.model_config, (out / "checkpoint.bin").string());
    save_manifest(m, (out / "manifest.json").string());
    if (model.diverged)
        throw Error(ErrorKind::Diverged,
                    "training diverged after " + std::to_string(model.curve.size()) +
                        " epochs; best checkpoint kept");
    std::cout << "trained " << model.curve.size() << " epochs; best validation L1 "
              << model.best_val_loss << " at epoch " << model.best_epoch << '\n';
    return 0;
}

int cmd_evaluate(const CommonOpts& o) {
    const fs::path out = ensure_out(o);
    EventLog log = load_log(o);
    auto [mc, tc] = resolve_configs(o);
    const std::vector<std::uint64_t> seeds = parse_seeds(o);
    Json echo = flags_echo(o);
    echo["model"] = Json::parse(model_config_to_json(mc));
    echo["train"] = Json::parse(train_config_to_json(tc));
    RunManifest m = start_manifest("evaluate", o, echo);
    SplitPlan plan = obtain_split(log, o, out, m);
    CrossValReport report = cross_validate(log, plan, mc, tc, seeds);
    save_report(report, (out / "report.json").string());
    emit_earliness_table(report.pooled_model, (out / "earliness.csv").string());
    save_manifest(m, (out / "manifest.json").string());
    std::cout << "model MAE " << report.model_mae_days.mean << " +- "
              << report.model_mae_days.std << " days over " << report.runs.size()
              << " runs; baseline " << report.dummy_mae_days.mean << " +- "
              << report.dummy_mae_days.std << " days\n";
    for (const auto& r : report.runs)
        if (r.diverged) {
            std::cout << "note: fold " << r.fold << " seed " << r.seed << " diverged after "
                      << r.epochs_completed << " epochs\n";
        }
    return 0;
}

int cmd_baseline(const CommonOpts& o) {
    const fs::path out = ensure_out(o);
    EventLog log = load_log(o);
    RunManifest m = start_manifest("baseline", o, flags_echo(o));
    SplitPlan plan = obtain_split(log, o, out, m);
    const auto records = build_prefixes(log);
    double duration_sum = 0.0;
    for (const auto& t : log.traces) duration_sum += t.duration_seconds();
    const double avg_days =
        duration_sum / static_cast<double>(log.traces.size()) / 86400.0;

    std::vector<EvaluationReport> fold_reports;
    Json runs = Json::array();
    for (int fold = 0; fold < plan.fold_count(); ++fold) {
        FoldSets sets = materialize_fold(records, plan, fold);
        std::vector<EventPrefixRecord> fit = sets.train;
        fit.insert(fit.end(), sets.validation.begin(), sets.validation.end());
        DummyBaseline dummy = fit_dummy(fit);
        std::vector<double> preds;
        preds.reserve(sets.test.size());
        for (const auto& r : sets.test) preds.push_back(dummy.predict(r.k));
        EvaluationReport rep = evaluate(preds, sets.test, avg_days);
        Json per = Json::array();
        for (const auto& [k, b] : rep.per_prefix_length)
            per.push_back({{"k", k}, {"count", b.count}, {"mae_days", b.mae_days}});
        runs.push_back({{"fold", fold},
                        {"dummy", {{"mae_days", rep.mae_days},
                                   {"relative_mae", rep.relative_mae},
                                   {"per_prefix_length", per}}}});
        fold_reports.push_back(std::move(rep));
    }
    std::vector<double> maes;
    for (const auto& r : fold_reports) maes.push_back(r.mae_days);
    const Aggregate agg = aggregate_values(maes);
    EvaluationReport pooled = pool_reports(fold_reports);
    Json j = {{"avg_case_duration_days", avg_days},
              {"runs", runs},
              {"aggregate", {{"dummy_mae_days", {{"mean", agg.mean}, {"std", agg.std}}}}}};
    {
        std::ofstream rf(out / "report.json", std::ios::binary);
        if (!rf) throw Error(ErrorKind::Io, "cannot write report.json");
        rf << j.dump(2) << '\n';
    }
    emit_earliness_table(pooled, (out / "earliness.csv").string());
    save_manifest(m, (out / "manifest.json").string());
    std::cout << "baseline MAE " << agg.mean << " +- " << agg.std << " days over "
              << plan.fold_count() << " folds\n";
    return 0;
}

int cmd_report(const CommonOpts& o) {
    const fs::path out(o.out_dir);
    const fs::path report_file = out / "report.json";
    std::ifstream in(report_file, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + report_file.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad report.json: ") + e.what());
    }
    std::cout << "average case duration: " << j.value("avg_case_duration_days", 0.0)
              << " days\n";
    if (j.contains("aggregate")) {
        for (const auto& [name, agg] : j.at("aggregate").items())
            std::cout << name << ": " << agg.value("mean", 0.0) << " +- " << agg.value("std", 0.0)
                      << '\n';
    }
    const char* pooled_key = j.contains("pooled_model") ? "pooled_model" : nullptr;
    if (pooled_key) {
        EvaluationReport rep;
        const Json& pm = j.at(pooled_key);
        rep.mae_days = pm.value("mae_days", 0.0);
        rep.relative_mae = pm.value("relative_mae", 0.0);
        for (const auto& b : pm.value("per_prefix_length", Json::array()))
            rep.per_prefix_length[b.at("k").get<std::size_t>()] = {
                b.at("count").get<std::size_t>(), b.at("mae_days").get<double>()};
        emit_earliness_table(rep, (out / "earliness.csv").string());
        std::cout << "earliness table refreshed from pooled model results\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-log to graph datasets and a remaining-time graph transformer"};
    app.require_subcommand(1);
    CommonOpts o;
    SynthConfig synth;

    auto add_common = [&](CLI::App* cmd, bool needs_log) {
        if (needs_log) {
            cmd->add_option("--log", o.log_path, "event log file");
            cmd->add_option("--schema", o.schema_path, "attribute schema JSON");
            cmd->add_option("--format", o.format, "csv or xes");
        }
        cmd->add_option("--out", o.out_dir, "output directory");
        cmd->add_option("--seed", o.seed, "master seed");
    };
    auto add_split_opts = [&](CLI::App* cmd) {
        cmd->add_option("--split", o.split_mode, "cv or holdout");
        cmd->add_option("--folds", o.folds, "fold count (cv) or training fraction (holdout)");
        cmd->add_option("--val-fraction", o.val_fraction, "validation share of non-test cases");
        cmd->add_option("--fold", o.fold, "fold index used for training statistics");
    };
    auto add_model_opts = [&](CLI::App* cmd) {
        cmd->add_option("--profile", o.profile, "paper or desk");
        cmd->add_option("--config", o.config_path, "JSON config file with model/train sections");
        cmd->add_option("--hidden", o.hidden, "hidden width");
        cmd->add_option("--layers", o.layers, "hybrid layer count");
        cmd->add_option("--heads", o.heads, "attention heads");
        cmd->add_option("--d-pe", o.d_pe, "positional encoding size");
        cmd->add_option("--d-se", o.d_se, "structural encoding size");
        cmd->add_option("--edge-encoder-layers", o.edge_encoder_layers, "1 or 2");
        cmd->add_option("--mpnn-dropout", o.mpnn_dropout, "message-passing dropout");
        cmd->add_option("--attn-dropout", o.attn_dropout, "attention dropout");
        cmd->add_option("--readout", o.readout, "mean or sum");
        cmd->add_flag("--literal-equations", o.literal_equations,
                      "disable residual connections and layer normalization");
        cmd->add_option("--epochs", o.epochs, "training epochs");
        cmd->add_option("--warmup", o.warmup, "warmup epochs");
        cmd->add_option("--batch-size", o.batch_size, "graphs per optimizer step");
        cmd->add_option("--patience", o.patience, "early-stop patience (0 off)");
        cmd->add_option("--lr", o.lr, "base learning rate");
        cmd->add_option("--weight-decay", o.weight_decay, "decoupled weight decay");
    };

    auto* synth_cmd = app.add_subcommand("synth", "generate the bundled two-variant log");
    add_common(synth_cmd, false);
    synth_cmd->add_option("--traces", synth.traces, "number of cases");
    synth_cmd->add_option("--length", synth.trace_length, "events per case");
    synth_cmd->add_option("--fast-gap", synth.fast_gap_seconds, "variant A inter-event gap (s)");
    synth_cmd->add_option("--slow-gap", synth.slow_gap_seconds, "variant B inter-event gap (s)");
    synth_cmd->add_option("--stagger", synth.start_stagger_seconds, "case start spacing (s)");

    auto* convert_cmd = app.add_subcommand("convert", "event log to graph dataset plus stats");
    add_common(convert_cmd, true);
    add_split_opts(convert_cmd);

    auto* split_cmd = app.add_subcommand("split", "write a case-level split plan");
    add_common(split_cmd, true);
    add_split_opts(split_cmd);

    auto* train_cmd = app.add_subcommand("train", "train on one fold, save the checkpoint");
    add_common(train_cmd, true);
    add_split_opts(train_cmd);
    add_model_opts(train_cmd);

    auto* eval_cmd = app.add_subcommand("evaluate", "train and test every fold x seed");
    add_common(eval_cmd, true);
    add_split_opts(eval_cmd);
    add_model_opts(eval_cmd);
    eval_cmd->add_option("--seeds", o.seeds_csv, "comma-separated training seeds");

    auto* baseline_cmd = app.add_subcommand("baseline", "per-length mean baseline on the split");
    add_common(baseline_cmd, true);
    add_split_opts(baseline_cmd);

    auto* report_cmd = app.add_subcommand("report", "summarize report.json, refresh earliness");
    add_common(report_cmd, false);

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) return cmd_synth(o, synth);
        if (convert_cmd->parsed()) return cmd_convert(o);
        if (split_cmd->parsed()) return cmd_split(o);
        if (train_cmd->parsed()) return cmd_train(o);
        if (eval_cmd->parsed()) return cmd_evaluate(o);
        if (baseline_cmd->parsed()) return cmd_baseline(o);
        if (report_cmd->parsed()) return cmd_report(o);
        throw Error(ErrorKind::Usage, "no subcommand given");
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << Json{{"error", "Usage"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << Json{{"error", error_kind_name(e.kind())}, {"message", e.what()}}.dump()
                  << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << Json{{"error", "Io"}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }
}
