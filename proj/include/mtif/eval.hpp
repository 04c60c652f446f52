#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/influence.hpp"
#include "mtif/io.hpp"
#include "mtif/oracle.hpp"
#include "mtif/parallel.hpp"
#include "mtif/random.hpp"
#include "mtif/selection.hpp"
#include "mtif/synthetic.hpp"
#include "mtif/trainer.hpp"

namespace mtif {

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of 1-based ranks i+1..j+1
        for (std::size_t r = i; r <= j; ++r) ranks[order[r]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double centered_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
    const auto n = static_cast<double>(xs.size());
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

/// Product-moment correlation. A constant input has no defined correlation
/// and yields NaN, which downstream averaging excludes.
inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw LengthMismatch("pearson inputs differ in length");
    if (xs.size() < 2) throw LengthMismatch("pearson needs at least two points");
    return detail::centered_correlation(xs, ys);
}

/// Rank correlation: Pearson applied to average ranks (ties share the mean of
/// the ranks they occupy). NaN when either input is constant.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw LengthMismatch("spearman inputs differ in length");
    if (xs.empty()) throw LengthMismatch("spearman needs nonempty inputs");
    if (xs.size() == 1) return std::numeric_limits<double>::quiet_NaN();
    return detail::centered_correlation(detail::average_ranks(xs), detail::average_ranks(ys));
}

/// One protocol measurement: how well a scoring method's task-removal scores
/// track the exact leave-one-task-out deltas for one target task and seed.
struct CorrelationReport {
    int target_task = 0;
    std::string method;  // "mtif" or "cosine"
    double rho = std::numeric_limits<double>::quiet_NaN();
    double r = std::numeric_limits<double>::quiet_NaN();
    int n_points = 0;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const CorrelationReport& rep) {
    j = nlohmann::json{{"target_task", rep.target_task},
                       {"method", rep.method},
                       {"n_points", rep.n_points},
                       {"seed", rep.seed}};
    j["rho"] = std::isfinite(rep.rho) ? nlohmann::json(rep.rho) : nlohmann::json(nullptr);
    j["r"] = std::isfinite(rep.r) ? nlohmann::json(rep.r) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, CorrelationReport& rep) {
    rep.target_task = j.at("target_task").get<int>();
    rep.method = j.at("method").get<std::string>();
    rep.n_points = j.at("n_points").get<int>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.rho = j.at("rho").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                    : j.at("rho").get<double>();
    rep.r = j.at("r").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                : j.at("r").get<double>();
}

/// Per-(target, method) mean and standard error of rho over seeds; undefined
/// (NaN) correlations are excluded from the average.
struct CorrelationSummary {
    int target_task = 0;
    std::string method;
    double mean_rho = std::numeric_limits<double>::quiet_NaN();
    double se_rho = std::numeric_limits<double>::quiet_NaN();
    int n_used = 0;
};

inline void to_json(nlohmann::json& j, const CorrelationSummary& s) {
    j = nlohmann::json{{"target_task", s.target_task},
                       {"method", s.method},
                       {"n_used", s.n_used}};
    j["mean_rho"] =
        std::isfinite(s.mean_rho) ? nlohmann::json(s.mean_rho) : nlohmann::json(nullptr);
    j["se_rho"] = std::isfinite(s.se_rho) ? nlohmann::json(s.se_rho) : nlohmann::json(nullptr);
}

inline std::vector<CorrelationSummary> summarize_reports(
    const std::vector<CorrelationReport>& reports) {
    std::vector<CorrelationSummary> out;
    auto find = [&](int k, const std::string& m) -> CorrelationSummary& {
        for (auto& s : out)
            if (s.target_task == k && s.method == m) return s;
        out.push_back({k, m, 0.0, 0.0, 0});
        return out.back();
    };
    for (const auto& rep : reports) {
        if (!std::isfinite(rep.rho)) {
            find(rep.target_task, rep.method);  // keep the group visible
            continue;
        }
        CorrelationSummary& s = find(rep.target_task, rep.method);
        s.mean_rho += rep.rho;
        ++s.n_used;
    }
    for (auto& s : out) {
        if (s.n_used == 0) {
            s.mean_rho = std::numeric_limits<double>::quiet_NaN();
            s.se_rho = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        s.mean_rho /= static_cast<double>(s.n_used);
        if (s.n_used < 2) {
            s.se_rho = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        double ss = 0.0;
        for (const auto& rep : reports)
            if (rep.target_task == s.target_task && rep.method == s.method &&
                std::isfinite(rep.rho)) {
                double d = rep.rho - s.mean_rho;
                ss += d * d;
            }
        s.se_rho = std::sqrt(ss / static_cast<double>(s.n_used - 1)) /
                   std::sqrt(static_cast<double>(s.n_used));
    }
    return out;
}

struct LotoProtocolOptions {
    double holdout = 0.2;  // fraction of the target's pool reserved as validation
    int jobs = 1;
};

namespace detail {

/// Re-splits the target task's pooled train+val data, reserving `holdout` of
/// it as the new validation set. Other tasks and all test splits are left
/// untouched.
inline MtlDataset resplit_target(const MtlDataset& ds, int k, double holdout,
                                 std::uint64_t seed) {
    std::vector<Sample> pool = ds.tasks[k].train;
    pool.insert(pool.end(), ds.tasks[k].val.begin(), ds.tasks[k].val.end());
    std::mt19937_64 rng(
        splitmix64(derive_seed(seed, "eval/resplit") ^ static_cast<std::uint64_t>(k)));
    std::shuffle(pool.begin(), pool.end(), rng);
    auto counts = split_sizes(static_cast<int>(pool.size()), {1.0 - holdout, holdout, 0.0});
    MtlDataset out = ds;
    out.tasks[k].train.assign(pool.begin(), pool.begin() + counts[0]);
    out.tasks[k].val.assign(pool.begin() + counts[0], pool.begin() + counts[0] + counts[1]);
    return out;
}

}  // namespace detail

/// For each target task and each seed: re-split the target's data, fit, score
/// every other task by the analytic task-removal formula and by the cosine
/// affinity baseline, retrain without each source task for the exact deltas,
/// and report how well each method's scores rank the deltas. The cosine
/// scores are negated before correlating: high affinity predicts that
/// removing the task raises the target's loss, i.e. a negative delta.
inline std::vector<CorrelationReport> loto_protocol(const ModelSpec& spec, const MtlDataset& ds,
                                                    const SolverConfig& cfg,
                                                    const std::vector<std::uint64_t>& seeds,
                                                    const LotoProtocolOptions& opts = {}) {
    spec.validate();
    ds.validate();
    const int K = ds.task_count();
    if (K < 3)
        throw InvalidConfig("the task-removal protocol needs at least three tasks "
                            "(two sources per target)");
    if (!(opts.holdout > 0.0) || opts.holdout >= 1.0)
        throw InvalidConfig("holdout fraction must lie in (0, 1)");
    if (seeds.empty()) throw InvalidConfig("at least one seed is required");

    struct Unit {
        int target;
        std::uint64_t seed;
    };
    std::vector<Unit> units;
    for (int k = 0; k < K; ++k)
        for (std::uint64_t s : seeds) units.push_back({k, s});

    std::vector<std::array<CorrelationReport, 2>> slots(units.size());
    parallel_for(units.size(), opts.jobs, [&](std::size_t u) {
        const int k = units[u].target;
        const std::uint64_t seed = units[u].seed;
        MtlDataset dsk = detail::resplit_target(ds, k, opts.holdout, seed);
        RetrainOracle oracle(spec, dsk, cfg);
        InfluenceEngine engine(spec, dsk, oracle.base_fit());
        TaskAffinity aff = cosine_task_affinity(spec, oracle.base_fit().params, dsk);

        std::vector<double> analytic, baseline, deltas;
        for (int l = 0; l < K; ++l) {
            if (l == k) continue;
            analytic.push_back(engine.mtif_task(l, k));
            baseline.push_back(-aff.scores(l, k));
            deltas.push_back(oracle.loto_delta(l, {k})[0].delta);
        }
        const int n = K - 1;
        slots[u][0] = {k, "mtif", spearman(analytic, deltas), pearson(analytic, deltas), n, seed};
        slots[u][1] = {k, "cosine", spearman(baseline, deltas), pearson(baseline, deltas), n,
                       seed};
    });

    std::vector<CorrelationReport> reports;
    reports.reserve(units.size() * 2);
    for (auto& pair : slots) {
        reports.push_back(std::move(pair[0]));
        reports.push_back(std::move(pair[1]));
    }
    return reports;
}

struct LotoBenchmarkOptions {
    bool reseed_data = true;   // regenerate the synthetic dataset per seed
    bool reseed_split = true;  // re-randomize the target holdout per seed
    double holdout = 0.2;
    int jobs = 1;
    double lambda = 1.0;
};

/// Runs the protocol on freshly generated synthetic data for each seed.
/// Reports carry the benchmark seed regardless of which randomness the flags
/// actually reseeded.
inline std::vector<CorrelationReport> synthetic_loto_benchmark(
    const SyntheticConfig& data_cfg, const SolverConfig& cfg,
    const std::vector<std::uint64_t>& seeds, const LotoBenchmarkOptions& opts = {}) {
    if (seeds.empty()) throw InvalidConfig("at least one seed is required");
    std::vector<CorrelationReport> all;
    for (std::uint64_t s : seeds) {
        SyntheticConfig gen = data_cfg;
        if (opts.reseed_data) gen.seed = s;
        MtlDataset ds = generate_synthetic(gen);
        ModelSpec spec =
            ModelSpec::make(ModelKind::ridge_linear, gen.tasks, gen.dim, opts.lambda);
        LotoProtocolOptions popts;
        popts.holdout = opts.holdout;
        popts.jobs = opts.jobs;
        std::uint64_t split_seed = opts.reseed_split ? s : data_cfg.seed;
        auto sub = loto_protocol(spec, ds, cfg, {split_seed}, popts);
        for (auto& rep : sub) rep.seed = s;
        all.insert(all.end(), std::make_move_iterator(sub.begin()),
                   std::make_move_iterator(sub.end()));
    }
    return all;
}

struct ScatterSummary {
    double pearson_r = std::numeric_limits<double>::quiet_NaN();
    double slope = std::numeric_limits<double>::quiet_NaN();
    int n = 0;
};

namespace detail {

struct ScatterPoint {
    int source_task = 0, source_index = 0, target_task = 0;
    double delta = 0.0, score = 0.0;
};

inline ScatterSummary write_scatter(const std::vector<ScatterPoint>& points,
                                    const std::string& path, const std::string& config_hash) {
    std::ofstream out = open_out(path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
    out << "source_task,source_index,target_task,loo_delta,mtif_score\n";
    std::vector<double> xs, ys;
    for (const auto& p : points) {
        out << p.source_task << ',' << p.source_index << ',' << p.target_task << ','
            << format_double(p.delta) << ',' << format_double(p.score) << '\n';
        xs.push_back(p.delta);
        ys.push_back(p.score);
    }
    out.close();

    ScatterSummary s;
    s.n = static_cast<int>(xs.size());
    if (s.n >= 2) {
        s.pearson_r = centered_correlation(xs, ys);
        double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / s.n;
        double my = std::accumulate(ys.begin(), ys.end(), 0.0) / s.n;
        double sxy = 0.0, sxx = 0.0;
        for (int i = 0; i < s.n; ++i) {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx) * (xs[i] - mx);
        }
        if (sxx > 0.0) s.slope = sxy / sxx;
    }

    nlohmann::json meta;
    meta["n"] = s.n;
    meta["pearson"] =
        std::isfinite(s.pearson_r) ? nlohmann::json(s.pearson_r) : nlohmann::json(nullptr);
    meta["slope"] = std::isfinite(s.slope) ? nlohmann::json(s.slope) : nlohmann::json(nullptr);
    if (!config_hash.empty()) meta["config_hash"] = config_hash;
    std::ofstream mo = open_out(path + ".meta.json");
    mo << meta.dump(2) << '\n';
    return s;
}

}  // namespace detail

/// Writes matched (exact delta, predicted score) pairs for offline plotting:
/// one CSV row per oracle record, x the retraining delta and y the analytic
/// score, plus a `<path>.meta.json` sidecar with the least-squares slope of
/// predicted on exact and their Pearson r. A nonempty config hash is embedded
/// in both files.
inline ScatterSummary scatter_export(const InfluenceMatrix& im,
                                     const std::vector<LooRecord>& records,
                                     const std::string& path,
                                     const std::string& config_hash = "") {
    im.validate();
    std::vector<detail::ScatterPoint> points;
    points.reserve(records.size());
    for (const auto& rec : records) {
        if (rec.source_task < 0 || rec.source_task >= im.task_count() ||
            rec.source_index < 0 ||
            rec.source_index >= im.scores[rec.source_task].rows() || rec.target_task < 0 ||
            rec.target_task >= im.scores[rec.source_task].cols())
            throw IndexMismatch("oracle record (" + std::to_string(rec.source_task) + ", " +
                                std::to_string(rec.source_index) + ", " +
                                std::to_string(rec.target_task) +
                                ") has no influence-matrix entry");
        points.push_back({rec.source_task, rec.source_index, rec.target_task, rec.delta,
                          im.at(rec.source_task, rec.source_index, rec.target_task)});
    }
    return detail::write_scatter(points, path, config_hash);
}

/// Same export driven by score files instead of live objects: joins influence
/// and oracle rows on (source_task, source_index, target_task). Every oracle
/// row must find its influence partner, otherwise the files disagree about
/// what was scored.
inline ScatterSummary scatter_export(const std::vector<ScoreRow>& influence_rows,
                                     const std::vector<ScoreRow>& oracle_rows,
                                     const std::string& path,
                                     const std::string& config_hash = "") {
    std::map<std::tuple<int, int, int>, double> lookup;
    for (const auto& r : influence_rows)
        lookup[{r.source_task, r.source_index, r.target_task}] = r.score;
    std::vector<detail::ScatterPoint> points;
    points.reserve(oracle_rows.size());
    for (const auto& r : oracle_rows) {
        auto it = lookup.find({r.source_task, r.source_index, r.target_task});
        if (it == lookup.end())
            throw SchemaError("no influence score for oracle row (" +
                              std::to_string(r.source_task) + ", " +
                              std::to_string(r.source_index) + ", " +
                              std::to_string(r.target_task) + ")");
        points.push_back({r.source_task, r.source_index, r.target_task, r.score, it->second});
    }
    return detail::write_scatter(points, path, config_hash);
}

}  // namespace mtif
