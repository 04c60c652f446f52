#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/eval.hpp"
#include "mtif/influence.hpp"
#include "mtif/io.hpp"
#include "mtif/model.hpp"
#include "mtif/oracle.hpp"
#include "mtif/random.hpp"
#include "mtif/selection.hpp"
#include "mtif/synthetic.hpp"
#include "mtif/trainer.hpp"

namespace mtif {

/// One config file drives the whole pipeline; every stage rederives its
/// randomness from global_seed, and the hash of the canonical JSON form is
/// stamped into each artifact so stages from different configs cannot be
/// mixed silently.
struct RunConfig {
    // model
    std::string model_kind = "ridge";  // "ridge" | "logistic"
    double lambda = 1.0;               // uniform coupling strength toward gamma
    std::vector<double> lambdas;       // optional per-task override

    // data: exactly one source
    bool use_synthetic = true;
    SyntheticConfig synth;
    std::string csv_path;
    bool binarize = false;  // threshold labels at 0 after generation

    SolverConfig solver;

    // influence
    std::vector<int> targets;       // empty = every task
    bool normalize_scores = false;  // z-score each target column before writing

    // oracle
    int oracle_cap = -1;  // leave-one-out refits per source task; -1 = all
    std::string oracle_convention = "sigma_zero";  // or "delete_renormalize"

    // selection
    std::vector<double> selection_grid{0.0, 0.05, 0.1, 0.2};
    bool flip_sign = false;  // rank most-harmful-last instead of first

    // eval
    std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};
    std::vector<std::string> protocols{"scatter"};  // "scatter" | "loto"
    double loto_holdout = 0.2;

    std::string output_dir = "out";
    std::uint64_t global_seed = 0;

    void validate() const {
        if (model_kind != "ridge" && model_kind != "logistic")
            throw InvalidConfig("model.kind must be \"ridge\" or \"logistic\"");
        if (lambdas.empty()) {
            if (!(lambda > 0.0) || !std::isfinite(lambda))
                throw InvalidConfig("model.lambda must be a positive number");
        } else {
            for (double l : lambdas)
                if (!(l > 0.0) || !std::isfinite(l))
                    throw InvalidConfig("model.lambdas must all be positive numbers");
        }
        if (use_synthetic) {
            synth.validate();
        } else if (csv_path.empty()) {
            throw InvalidConfig("data needs either a synthetic section or a csv path");
        }
        solver.validate();
        for (int k : targets)
            if (k < 0) throw InvalidConfig("influence.targets must be nonnegative task ids");
        if (oracle_cap != -1 && oracle_cap < 1)
            throw InvalidConfig("oracle.per_task_cap must be -1 (all) or >= 1");
        if (oracle_convention != "sigma_zero" && oracle_convention != "delete_renormalize")
            throw InvalidConfig(
                "oracle.convention must be \"sigma_zero\" or \"delete_renormalize\"");
        if (selection_grid.empty()) throw InvalidConfig("selection.grid is empty");
        for (double f : selection_grid)
            if (!(f >= 0.0) || !(f <= 0.5))
                throw InvalidConfig("selection.grid fractions must lie in [0, 0.5]");
        if (protocols.empty()) throw InvalidConfig("eval.protocols is empty");
        for (const auto& p : protocols)
            if (p != "scatter" && p != "loto")
                throw InvalidConfig("eval.protocols entries must be \"scatter\" or \"loto\"");
        if (eval_seeds.empty()) throw InvalidConfig("eval.seeds is empty");
        if (!(loto_holdout > 0.0) || !(loto_holdout < 1.0))
            throw InvalidConfig("eval.loto_holdout must lie in (0, 1)");
        if (output_dir.empty()) throw InvalidConfig("output_dir is empty");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["model"] = {{"kind", model_kind}, {"lambda", lambda}, {"lambdas", lambdas}};
        if (use_synthetic)
            j["data"] = {{"synthetic", synth.to_json()}, {"binarize", binarize}};
        else
            j["data"] = {{"csv", csv_path}, {"binarize", binarize}};
        j["solver"] = {{"grad_tol", solver.grad_tol},
                       {"max_iter", solver.max_iter},
                       {"damping", solver.damping}};
        j["influence"] = {{"targets", targets}, {"normalize", normalize_scores}};
        j["oracle"] = {{"per_task_cap", oracle_cap}, {"convention", oracle_convention}};
        j["selection"] = {{"grid", selection_grid}, {"flip_sign", flip_sign}};
        j["eval"] = {{"seeds", eval_seeds},
                     {"protocols", protocols},
                     {"loto_holdout", loto_holdout}};
        j["output_dir"] = output_dir;
        j["global_seed"] = global_seed;
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        try {
            if (j.contains("model")) {
                const auto& m = j.at("model");
                c.model_kind = m.value("kind", c.model_kind);
                c.lambda = m.value("lambda", c.lambda);
                c.lambdas = m.value("lambdas", c.lambdas);
            }
            if (j.contains("data")) {
                const auto& d = j.at("data");
                if (d.contains("synthetic") && d.contains("csv"))
                    throw InvalidConfig("data must name one source, not both synthetic and csv");
                if (d.contains("csv")) {
                    c.use_synthetic = false;
                    c.csv_path = d.at("csv").get<std::string>();
                } else if (d.contains("synthetic")) {
                    c.use_synthetic = true;
                    c.synth = SyntheticConfig::from_json(d.at("synthetic"));
                }
                c.binarize = d.value("binarize", c.binarize);
            }
            if (j.contains("solver")) {
                const auto& s = j.at("solver");
                c.solver.grad_tol = s.value("grad_tol", c.solver.grad_tol);
                c.solver.max_iter = s.value("max_iter", c.solver.max_iter);
                c.solver.damping = s.value("damping", c.solver.damping);
            }
            if (j.contains("influence")) {
                const auto& i = j.at("influence");
                c.targets = i.value("targets", c.targets);
                c.normalize_scores = i.value("normalize", c.normalize_scores);
            }
            if (j.contains("oracle")) {
                const auto& o = j.at("oracle");
                c.oracle_cap = o.value("per_task_cap", c.oracle_cap);
                c.oracle_convention = o.value("convention", c.oracle_convention);
            }
            if (j.contains("selection")) {
                const auto& s = j.at("selection");
                c.selection_grid = s.value("grid", c.selection_grid);
                c.flip_sign = s.value("flip_sign", c.flip_sign);
            }
            if (j.contains("eval")) {
                const auto& e = j.at("eval");
                c.eval_seeds = e.value("seeds", c.eval_seeds);
                c.protocols = e.value("protocols", c.protocols);
                c.loto_holdout = e.value("loto_holdout", c.loto_holdout);
            }
            c.output_dir = j.value("output_dir", c.output_dir);
            c.global_seed = j.value("global_seed", c.global_seed);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidConfig(std::string("config: ") + e.what());
        }
        c.validate();
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in = detail::open_in(path);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw InvalidConfig("config file is not valid JSON: " + path);
        return from_json(j);
    }

    /// Fingerprint of the fields that shape the shared artifacts: data,
    /// model, solver, influence and oracle settings, and the global seed.
    /// Downstream-only knobs (selection, eval) and the output location are
    /// excluded so tuning them does not orphan existing artifacts; their
    /// effects are recorded inside the files they alone produce.
    std::string hash() const {
        nlohmann::json j = to_json();
        j.erase("output_dir");
        j.erase("selection");
        j.erase("eval");
        return config_hash_hex(j);
    }

    ModelKind kind() const {
        return model_kind == "ridge" ? ModelKind::ridge_linear : ModelKind::soft_logistic;
    }

    /// Uniform lambda expanded to K tasks, or the per-task override checked
    /// against the actual task count.
    std::vector<double> task_lambdas(int task_count) const {
        if (lambdas.empty()) return std::vector<double>(task_count, lambda);
        if (static_cast<int>(lambdas.size()) != task_count)
            throw InvalidConfig("model.lambdas has " + std::to_string(lambdas.size()) +
                                " entries for " + std::to_string(task_count) + " tasks");
        return lambdas;
    }
};

/// Fitted parameters plus the solve metadata, as stored in model.json.
struct ModelFile {
    ModelSpec spec;
    MtlParams params;
    bool converged = false;
    int iterations = 0;
    double final_grad_norm = std::numeric_limits<double>::quiet_NaN();
    double damping_used = 0.0;
    std::string config_hash;
};

inline void save_model_json(const ModelFile& mf, const std::string& path) {
    nlohmann::json j;
    j["config_hash"] = mf.config_hash;
    j["kind"] = model_kind_name(mf.spec.kind);
    j["dim"] = mf.spec.dim;
    j["lambdas"] = mf.spec.lambdas;
    j["converged"] = mf.converged;
    j["iterations"] = mf.iterations;
    j["final_grad_norm"] = mf.final_grad_norm;
    j["damping_used"] = mf.damping_used;
    j["gamma"] = std::vector<double>(mf.params.gamma.data(),
                                     mf.params.gamma.data() + mf.params.gamma.size());
    nlohmann::json thetas = nlohmann::json::array();
    for (const auto& th : mf.params.thetas)
        thetas.push_back(std::vector<double>(th.data(), th.data() + th.size()));
    j["thetas"] = std::move(thetas);
    std::ofstream out = detail::open_out(path);
    out << j.dump(2) << '\n';
}

inline ModelFile load_model_json(const std::string& path) {
    std::ifstream in = detail::open_in(path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw SchemaError("model file is not valid JSON: " + path);
    ModelFile mf;
    try {
        std::string kind = j.at("kind").get<std::string>();
        if (kind == model_kind_name(ModelKind::ridge_linear))
            mf.spec.kind = ModelKind::ridge_linear;
        else if (kind == model_kind_name(ModelKind::soft_logistic))
            mf.spec.kind = ModelKind::soft_logistic;
        else
            throw SchemaError("model file has unknown kind: " + kind);
        mf.spec.dim = j.at("dim").get<int>();
        mf.spec.lambdas = j.at("lambdas").get<std::vector<double>>();
        mf.converged = j.at("converged").get<bool>();
        mf.iterations = j.at("iterations").get<int>();
        mf.final_grad_norm = j.at("final_grad_norm").get<double>();
        mf.damping_used = j.value("damping_used", 0.0);
        mf.config_hash = j.value("config_hash", std::string());
        auto gamma = j.at("gamma").get<std::vector<double>>();
        auto thetas = j.at("thetas").get<std::vector<std::vector<double>>>();
        mf.spec.validate();
        if (static_cast<int>(gamma.size()) != mf.spec.dim ||
            static_cast<int>(thetas.size()) != mf.spec.task_count())
            throw SchemaError("model file parameter shapes disagree with its spec");
        mf.params.gamma = Eigen::Map<const Eigen::VectorXd>(gamma.data(), gamma.size());
        for (const auto& th : thetas) {
            if (static_cast<int>(th.size()) != mf.spec.dim)
                throw SchemaError("model file theta block has wrong length");
            mf.params.thetas.emplace_back(
                Eigen::Map<const Eigen::VectorXd>(th.data(), th.size()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("model file " + path + ": " + e.what());
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        throw SchemaError("model file " + path + ": " + e.what());
    }
    return mf;
}

namespace cli {

/// Fixed artifact names under the configured output directory.
struct RunPaths {
    std::string dataset, model, influence_scores, oracle_scores, scatter, eval_reports,
        eval_summary, selection_report, selected_model;

    static RunPaths in(const std::string& dir) {
        auto join = [&](const char* name) {
            return (std::filesystem::path(dir) / name).string();
        };
        RunPaths p;
        p.dataset = join("dataset.csv");
        p.model = join("model.json");
        p.influence_scores = join("scores_mtif.csv");
        p.oracle_scores = join("scores_oracle.csv");
        p.scatter = join("scatter.csv");
        p.eval_reports = join("eval_reports.json");
        p.eval_summary = join("eval_summary.json");
        p.selection_report = join("selection.json");
        p.selected_model = join("model_selected.json");
        return p;
    }
};

namespace detail {

/// The `# config_hash=<hex>` comment in a CSV's leading comment block, or "".
inline std::string read_csv_config_hash(const std::string& path) {
    std::ifstream in = mtif::detail::open_in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] != '#') break;
        const std::string key = "config_hash=";
        auto pos = line.find(key);
        if (pos != std::string::npos) return line.substr(pos + key.size());
    }
    return "";
}

inline void require_hash(const std::string& found, const std::string& expected,
                         const std::string& what) {
    if (found != expected)
        throw SchemaError(what + " was produced by a different config (found hash \"" + found +
                          "\", expected \"" + expected + "\")");
}

inline MtlDataset load_run_dataset(const RunPaths& paths, const std::string& expected_hash) {
    MtlDataset ds = load_dataset(paths.dataset);
    std::string found;
    if (ds.provenance.contains("config_hash") && ds.provenance["config_hash"].is_string())
        found = ds.provenance["config_hash"].get<std::string>();
    require_hash(found, expected_hash, paths.dataset);
    return ds;
}

inline ModelSpec spec_for(const RunConfig& cfg, const MtlDataset& ds) {
    ModelSpec spec;
    spec.kind = cfg.kind();
    spec.dim = ds.dim;
    spec.lambdas = cfg.task_lambdas(ds.task_count());
    spec.validate();
    return spec;
}

inline void require_binary_labels(const MtlDataset& ds) {
    for (const auto& t : ds.tasks)
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (const auto& z : t.split(s))
                if (z.y != 0.0 && z.y != 1.0)
                    throw InvalidConfig(
                        "logistic model needs 0/1 labels; set data.binarize for synthetic "
                        "data or provide a binary csv");
}

inline std::vector<int> effective_targets(const RunConfig& cfg, int task_count) {
    std::vector<int> targets = cfg.targets;
    if (targets.empty()) {
        targets.resize(task_count);
        for (int k = 0; k < task_count; ++k) targets[k] = k;
    }
    for (int k : targets)
        if (k < 0 || k >= task_count) throw InvalidConfig("influence target " +
                                                          std::to_string(k) +
                                                          " is not a task of this dataset");
    return targets;
}

/// Rebuilds the full (source sample) x (target task) matrix from score rows,
/// rejecting files that miss pairs or repeat them.
inline InfluenceMatrix matrix_from_rows(const std::vector<ScoreRow>& rows, const MtlDataset& ds) {
    const int K = ds.task_count();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    InfluenceMatrix im;
    for (int l = 0; l < K; ++l)
        im.scores.push_back(Eigen::MatrixXd::Constant(ds.train_size(l), K, nan));
    for (const auto& r : rows) {
        if (r.source_task < 0 || r.source_task >= K || r.target_task < 0 ||
            r.target_task >= K || r.source_index < 0 ||
            r.source_index >= ds.train_size(r.source_task))
            throw SchemaError("score row (" + std::to_string(r.source_task) + ", " +
                              std::to_string(r.source_index) + ", " +
                              std::to_string(r.target_task) +
                              ") does not fit this dataset");
        double& slot = im.scores[r.source_task](r.source_index, r.target_task);
        if (!std::isnan(slot))
            throw SchemaError("duplicate score row (" + std::to_string(r.source_task) + ", " +
                              std::to_string(r.source_index) + ", " +
                              std::to_string(r.target_task) + ")");
        slot = r.score;
    }
    for (const auto& m : im.scores)
        if (!m.allFinite())
            throw IncompleteMatrix(
                "selection needs scores for every (sample, target) pair; rerun influence "
                "without target filtering");
    return im;
}

}  // namespace detail

inline void run_gen(const RunConfig& cfg, int /*jobs*/ = 1) {
    if (!cfg.use_synthetic) throw InvalidConfig("gen requires a data.synthetic section");
    RunPaths paths = RunPaths::in(cfg.output_dir);
    SyntheticConfig sc = cfg.synth;
    // The config's own seed selects a sub-stream; the run's global seed still
    // reproduces everything through the per-stage derivation.
    sc.seed = splitmix64(derive_seed(cfg.global_seed, "cli/gen") ^ sc.seed);
    MtlDataset ds = generate_synthetic(sc);
    if (cfg.binarize) ds = binarize_labels(ds);
    ds.provenance["config_hash"] = cfg.hash();
    std::filesystem::create_directories(cfg.output_dir);
    save_dataset(ds, paths.dataset, cfg.hash());
}

inline void run_train(const RunConfig& cfg, int /*jobs*/ = 1) {
    RunPaths paths = RunPaths::in(cfg.output_dir);
    const std::string hash = cfg.hash();
    MtlDataset ds = detail::load_run_dataset(paths, hash);
    ModelSpec spec = detail::spec_for(cfg, ds);
    if (spec.kind == ModelKind::soft_logistic) detail::require_binary_labels(ds);
    FitResult fr = fit(spec, ds, TrainWeights::ones(ds), cfg.solver);
    ModelFile mf{spec, fr.params, fr.converged, fr.iterations, fr.final_grad_norm,
                 fr.damping_used, hash};
    save_model_json(mf, paths.model);
}

inline void run_influence(const RunConfig& cfg, int jobs = 1) {
    RunPaths paths = RunPaths::in(cfg.output_dir);
    const std::string hash = cfg.hash();
    MtlDataset ds = detail::load_run_dataset(paths, hash);
    ModelFile mf = load_model_json(paths.model);
    detail::require_hash(mf.config_hash, hash, paths.model);
    if (mf.spec.dim != ds.dim || mf.spec.task_count() != ds.task_count())
        throw SchemaError("model file shapes disagree with the dataset");

    EngineOptions eopts;
    eopts.seed = cfg.global_seed;
    InfluenceEngine eng(mf.spec, ds, mf.params, eopts, nullptr, mf.damping_used);
    InfluenceMatrix im = eng.mtif_all(jobs);
    std::vector<int> targets = detail::effective_targets(cfg, ds.task_count());

    std::vector<ScoreRow> rows;
    for (int l = 0; l < ds.task_count(); ++l)
        for (int i = 0; i < ds.train_size(l); ++i)
            for (int k : targets) rows.push_back({l, i, k, im.at(l, i, k), "mtif"});

    if (cfg.normalize_scores) {
        // z-score per target column; a zero-variance column centers to zero.
        for (int k : targets) {
            double sum = 0.0, count = 0.0;
            for (const auto& r : rows)
                if (r.target_task == k) sum += r.score, count += 1.0;
            double mean = count > 0 ? sum / count : 0.0;
            double ss = 0.0;
            for (const auto& r : rows)
                if (r.target_task == k) ss += (r.score - mean) * (r.score - mean);
            double sd = count > 1 ? std::sqrt(ss / (count - 1)) : 0.0;
            for (auto& r : rows)
                if (r.target_task == k) r.score = sd > 0 ? (r.score - mean) / sd : 0.0;
        }
    }
    save_scores_csv(rows, paths.influence_scores, hash);
}

inline void run_oracle(const RunConfig& cfg, int jobs = 1) {
    RunPaths paths = RunPaths::in(cfg.output_dir);
    const std::string hash = cfg.hash();
    MtlDataset ds = detail::load_run_dataset(paths, hash);
    ModelSpec spec = detail::spec_for(cfg, ds);
    if (spec.kind == ModelKind::soft_logistic) detail::require_binary_labels(ds);
    OracleOptions oo;
    oo.convention = cfg.oracle_convention == "sigma_zero"
                        ? RemovalConvention::sigma_zero
                        : RemovalConvention::delete_renormalize;
    RetrainOracle oracle(spec, ds, cfg.solver, oo);
    std::vector<int> targets = detail::effective_targets(cfg, ds.task_count());
    std::vector<LooRecord> records = oracle.loo_all(targets, jobs, cfg.oracle_cap);
    save_scores_csv(to_score_rows(records), paths.oracle_scores, hash);
}

inline void run_eval(const RunConfig& cfg, int jobs = 1) {
    RunPaths paths = RunPaths::in(cfg.output_dir);
    const std::string hash = cfg.hash();
    for (const std::string& proto : cfg.protocols) {
        if (proto == "scatter") {
            std::vector<ScoreRow> mtif_rows = load_scores_csv(paths.influence_scores);
            detail::require_hash(detail::read_csv_config_hash(paths.influence_scores), hash,
                                 paths.influence_scores);
            std::vector<ScoreRow> oracle_rows = load_scores_csv(paths.oracle_scores);
            detail::require_hash(detail::read_csv_config_hash(paths.oracle_scores), hash,
                                 paths.oracle_scores);
            scatter_export(mtif_rows, oracle_rows, paths.scatter, hash);
        } else {  // "loto"; RunConfig::validate rejects anything else
            MtlDataset ds = detail::load_run_dataset(paths, hash);
            ModelSpec spec = detail::spec_for(cfg, ds);
            LotoProtocolOptions popts;
            popts.holdout = cfg.loto_holdout;
            popts.jobs = jobs;
            std::vector<CorrelationReport> reports =
                loto_protocol(spec, ds, cfg.solver, cfg.eval_seeds, popts);
            nlohmann::json jr;
            jr["config_hash"] = hash;
            jr["reports"] = reports;
            std::ofstream out = mtif::detail::open_out(paths.eval_reports);
            out << jr.dump(2) << '\n';

            nlohmann::json js;
            js["config_hash"] = hash;
            js["summaries"] = summarize_reports(reports);
            std::ofstream sout = mtif::detail::open_out(paths.eval_summary);
            sout << js.dump(2) << '\n';
        }
    }
}

inline void run_select(const RunConfig& cfg, int jobs = 1) {
    RunPaths paths = RunPaths::in(cfg.output_dir);
    const std::string hash = cfg.hash();
    MtlDataset ds = detail::load_run_dataset(paths, hash);
    std::vector<ScoreRow> rows = load_scores_csv(paths.influence_scores);
    detail::require_hash(detail::read_csv_config_hash(paths.influence_scores), hash,
                         paths.influence_scores);
    InfluenceMatrix im = detail::matrix_from_rows(rows, ds);
    if (cfg.flip_sign)
        for (auto& m : im.scores) m = -m;
    ModelSpec spec = detail::spec_for(cfg, ds);
    SelectionResult res = select_and_retrain(spec, ds, im, cfg.selection_grid, cfg.solver,
                                             nullptr, jobs);
    nlohmann::json report = selection_report_json(res);
    report["config_hash"] = hash;
    report["flip_sign"] = cfg.flip_sign;
    std::ofstream out = mtif::detail::open_out(paths.selection_report);
    out << report.dump(2) << '\n';

    ModelFile mf{spec, res.model.params, res.model.converged, res.model.iterations,
                 res.model.final_grad_norm, res.model.damping_used, hash};
    save_model_json(mf, paths.selected_model);
}

}  // namespace cli
}  // namespace mtif
