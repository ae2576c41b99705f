#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mlt/atlas.hpp"
#include "mlt/cohort.hpp"
#include "mlt/core.hpp"
#include "mlt/geneassoc.hpp"
#include "mlt/graph.hpp"
#include "mlt/model.hpp"
#include "mlt/rng.hpp"
#include "mlt/stats.hpp"

namespace mlt::synth {

// ---------------------------------------------------------------------------
// Atlas
// ---------------------------------------------------------------------------

/// Synthetic parcellation: one Fibonacci lattice per hemisphere (mirrored
/// across x), cortical lobes assigned by latitude band, the lowest-latitude
/// points per hemisphere taken as subcortical. Region order is
/// L-cortical, R-cortical, L-subcortical, R-subcortical.
inline ParcellationAtlas generate_atlas(int n, std::uint64_t seed) {
    if (n < 14 || n % 2 != 0) throw invariant_error("generate_atlas: need an even region count >= 14");
    const int n_sub = n >= 40 ? 12 : 2;
    const int per_hemi = n / 2;
    const int cort_per_hemi = (n - n_sub) / 2;
    const int sub_per_hemi = n_sub / 2;

    // Fibonacci sphere points for one hemisphere, sorted by descending z.
    const double golden_angle = 2.399963229728653;  // pi * (3 - sqrt(5))
    std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(per_hemi));
    for (int i = 0; i < per_hemi; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / per_hemi;
        double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden_angle * i;
        pts[static_cast<std::size_t>(i)] = Eigen::Vector3d(rad * std::cos(phi), rad * std::sin(phi), z);
        pts[static_cast<std::size_t>(i)].normalize();
    }
    // small deterministic rotation about z so bands do not align with seams
    Rng rng = Rng(seed).stream(0xa71a5ULL);
    double spin = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    for (auto& p : pts) {
        double x = p.x() * std::cos(spin) - p.y() * std::sin(spin);
        double y = p.x() * std::sin(spin) + p.y() * std::cos(spin);
        p.x() = x;
        p.y() = y;
    }

    // The last sub_per_hemi points (lowest z) become subcortical; the rest
    // split into six latitude bands.
    const std::array<Lobe, 6> bands = {Lobe::frontal, Lobe::insula, Lobe::temporal,
                                       Lobe::occipital, Lobe::parietal, Lobe::limbic};
    auto cortical_lobe = [&](int i) {
        int band = i * 6 / cort_per_hemi;
        return bands[static_cast<std::size_t>(std::min(band, 5))];
    };

    std::vector<Region> regions;
    regions.reserve(static_cast<std::size_t>(n));
    auto push = [&](Hemisphere h, int local_idx, Lobe lobe) {
        Region r;
        r.index = static_cast<int>(regions.size());
        Eigen::Vector3d p = pts[static_cast<std::size_t>(local_idx)];
        if (h == Hemisphere::left) p.x() = -p.x();  // mirrored hemispheres
        r.sphere_xyz = p;
        r.lobe = lobe;
        char buf[48];
        std::snprintf(buf, sizeof buf, "%c_%s_%03d", h == Hemisphere::left ? 'L' : 'R', to_string(lobe),
                      local_idx + 1);
        r.label = buf;
        regions.push_back(std::move(r));
    };
    for (int h = 0; h < 2; ++h)
        for (int i = 0; i < cort_per_hemi; ++i)
            push(h == 0 ? Hemisphere::left : Hemisphere::right, i, cortical_lobe(i));
    for (int h = 0; h < 2; ++h)
        for (int i = 0; i < sub_per_hemi; ++i)
            push(h == 0 ? Hemisphere::left : Hemisphere::right, cort_per_hemi + i, Lobe::subcortical);
    // reindex in emission order
    for (std::size_t i = 0; i < regions.size(); ++i) regions[i].index = static_cast<int>(i);
    return ParcellationAtlas(std::move(regions));
}

/// Geodesic-style distance used by the connectome generator: great-circle
/// angle within a hemisphere; across hemispheres the angle to the mirrored
/// point plus a fixed interhemispheric offset.
inline double pair_distance(const ParcellationAtlas& atlas, int i, int j) {
    Eigen::Vector3d a = atlas.region(i).sphere_xyz;
    Eigen::Vector3d b = atlas.region(j).sphere_xyz;
    bool cross = atlas.hemisphere(i) != atlas.hemisphere(j);
    if (cross) b.x() = -b.x();
    double angle = std::acos(std::clamp(a.dot(b), -1.0, 1.0));
    return cross ? angle + 0.8 : angle;
}

enum class ConnectomeProfile { distance_decay, modular };

/// SC as thresholded distance decay, FC as the clipped correlation matrix
/// of a low-rank latent signal model. Both layers are rescaled so the
/// maximum weighted degree is 1.
inline LayeredConnectome generate_connectome(const ParcellationAtlas& atlas, std::uint64_t seed,
                                             ConnectomeProfile profile = ConnectomeProfile::distance_decay) {
    const int n = atlas.n();
    Rng rng = Rng(seed).stream(0xc0ececULL);

    Eigen::MatrixXd sc = Eigen::MatrixXd::Zero(n, n);
    const double sigma = 0.35;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double w = std::exp(-pair_distance(atlas, i, j) / sigma);
            if (profile == ConnectomeProfile::modular && atlas.region(i).lobe == atlas.region(j).lobe) w *= 1.8;
            sc(i, j) = w;
            sc(j, i) = w;
        }
    }
    WeightedGraph sc_graph = backbone_threshold(WeightedGraph(sc), 0.25);
    Eigen::MatrixXd sc_w = sc_graph.weights();
    double sc_deg = sc_w.rowwise().sum().maxCoeff();
    if (sc_deg > 0.0) sc_w /= sc_deg;

    // FC: correlations of k smooth latent patterns plus independent noise.
    const int k_factors = 5;
    Eigen::MatrixXd factors(n, k_factors);
    for (int f = 0; f < k_factors; ++f) {
        Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        dir *= 2.2;
        double phase = rng.uniform(0.0, 6.283185307179586);
        double gain = 0.6 + 0.8 * rng.uniform01();
        for (int i = 0; i < n; ++i)
            factors(i, f) = gain * std::cos(dir.dot(atlas.region(i).sphere_xyz) + phase);
    }
    Eigen::MatrixXd cov = factors * factors.transpose();
    cov.diagonal().array() += 0.4;
    Eigen::MatrixXd fc(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double c = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
            fc(i, j) = std::max(0.0, c);
        }
        fc(i, i) = 0.0;
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) fc(j, i) = fc(i, j);
    WeightedGraph fc_graph = backbone_threshold(WeightedGraph(fc), 0.30);
    Eigen::MatrixXd fc_w = fc_graph.weights();
    double fc_deg = fc_w.rowwise().sum().maxCoeff();
    if (fc_deg > 0.0) fc_w /= fc_deg;

    return LayeredConnectome(atlas, WeightedGraph(std::move(sc_w)), WeightedGraph(std::move(fc_w)));
}

// ---------------------------------------------------------------------------
// Ground-truth parameters
// ---------------------------------------------------------------------------

/// Ground-truth transport parameters with lobe-structured gate (occipital,
/// parietal and limbic lean on the SC layer; frontal, insula, temporal and
/// subcortex on the FC layer) and sparse nonnegative coupling maps.
inline TransportParameters make_ground_truth(const ParcellationAtlas& atlas, std::uint64_t seed) {
    const int n = atlas.n();
    Rng rng = Rng(seed).stream(0x9047ULL);
    TransportParameters p;
    p.h_s.resize(n);
    p.h_f.resize(n);
    p.gate.resize(n);
    for (int i = 0; i < n; ++i) {
        p.h_s(i) = 0.55 + 0.03 * rng.normal();
        p.h_f(i) = 0.50 + 0.03 * rng.normal();
        p.h_s(i) = std::max(p.h_s(i), 0.2);
        p.h_f(i) = std::max(p.h_f(i), 0.2);
        Lobe lobe = atlas.region(i).lobe;
        bool sc_leaning = lobe == Lobe::occipital || lobe == Lobe::parietal || lobe == Lobe::limbic;
        p.gate(i) = std::clamp((sc_leaning ? 0.72 : 0.28) + 0.03 * rng.normal(), 0.05, 0.95);
    }
    auto sparse_nonneg = [&](double density) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double u = rng.uniform01();
                double v = std::abs(rng.normal());
                if (u < density) m(i, j) = v;
            }
        double deg = m.rowwise().sum().maxCoeff();
        if (deg > 0.0) m /= deg;
        return m;
    };
    p.m_s = sparse_nonneg(0.12);
    p.m_f = sparse_nonneg(0.12);
    p.lambda_s = 0.50;
    p.lambda_f = 0.42;
    p.c = 0.35;
    p.k_source = GainSource::learned;
    p.k_s = Eigen::MatrixXd::Zero(n, n);
    p.k_f = Eigen::MatrixXd::Zero(n, n);
    p.cost = CostWeights::uniform(n);
    return p;
}

// ---------------------------------------------------------------------------
// Cohort
// ---------------------------------------------------------------------------

struct SynthConfig {
    int n_regions = 160;
    int n_subjects = 200;
    /// probabilities of a subject having 1..5 scans; realized counts follow
    /// the largest-remainder quota so the histogram is exact
    std::array<double, 5> scan_count_probs = {0.25, 0.45, 0.20, 0.08, 0.02};
    double age_lo = 55.0;
    double age_hi = 94.0;
    double interval_years = 1.25;
    double noise_sd = 0.02;  ///< additive Gaussian SUVR noise per observation
    std::uint64_t seed = 0;
    ConnectomeProfile profile = ConnectomeProfile::distance_decay;
    int n_genes = 18;
};

struct SynthCohort {
    LayeredConnectome connectome;
    Cohort cohort;
    TransportParameters ground_truth;
    std::vector<PropagationDecomposition> true_decompositions;  ///< noise-free, under ground truth
    std::vector<DominanceLabel> planted_dominance;              ///< a-priori per-region labels
    Eigen::VectorXd planted_margin;                             ///< population contribution difference
    ExpressionMatrix expression;
    std::array<int, 5> scan_count_histogram = {0, 0, 0, 0, 0};
};

inline const std::array<const char*, 18> default_gene_names = {
    "RCAN1", "NOTCH1", "PICALM", "ADAM10", "HSPD1", "NFE2L2", "HSPA5",     "MCL1",    "MAP2K7",
    "CHUK",  "IKBKB",  "CTNNB1", "RHOA",   "SIRT1", "SP1",    "TMEM106B", "CSNK1A1", "TH"};

namespace detail_synth {

inline std::array<int, 5> quota_counts(const std::array<double, 5>& probs, int n_subjects) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (total <= 0.0) throw invariant_error("generate_cohort: scan count probabilities must sum to > 0");
    std::array<int, 5> counts{};
    std::array<double, 5> remainder{};
    int assigned = 0;
    for (int k = 0; k < 5; ++k) {
        double exact = probs[static_cast<std::size_t>(k)] / total * n_subjects;
        counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact));
        remainder[static_cast<std::size_t>(k)] = exact - std::floor(exact);
        assigned += counts[static_cast<std::size_t>(k)];
    }
    while (assigned < n_subjects) {
        int best = 0;
        for (int k = 1; k < 5; ++k)
            if (remainder[static_cast<std::size_t>(k)] > remainder[static_cast<std::size_t>(best)]) best = k;
        counts[static_cast<std::size_t>(best)] += 1;
        remainder[static_cast<std::size_t>(best)] = -1.0;
        ++assigned;
    }
    return counts;
}

inline Eigen::VectorXd baseline_pattern(const ParcellationAtlas& atlas) {
    // entorhinal-like epicenters: the first temporal-lobe region of each
    // hemisphere
    std::vector<int> seeds;
    for (int h = 0; h < 2; ++h) {
        for (int i = 0; i < atlas.n(); ++i) {
            Hemisphere hemi = h == 0 ? Hemisphere::left : Hemisphere::right;
            if (atlas.hemisphere(i) == hemi && atlas.region(i).lobe == Lobe::temporal) {
                seeds.push_back(i);
                break;
            }
        }
    }
    if (seeds.empty()) seeds.push_back(0);
    Eigen::VectorXd pattern(atlas.n());
    for (int i = 0; i < atlas.n(); ++i) {
        double d = std::numeric_limits<double>::infinity();
        for (int s : seeds) d = std::min(d, pair_distance(atlas, i, s));
        pattern(i) = 1.1 + 0.6 * std::exp(-d / 0.35);
    }
    return pattern;
}

}  // namespace detail_synth

/// Deterministic synthetic cohort: baseline SUVR from a smooth field seeded
/// in entorhinal-like regions, follow-ups propagated under the ground-truth
/// model plus observation noise, covariates with fixed marginals, MMSE
/// linear in the predicted total tau change, and gene expression planted to
/// track the true dominance map.
inline SynthCohort generate_cohort(const SynthConfig& config) {
    if (config.n_subjects <= 0 || config.n_regions <= 0) throw invariant_error("generate_cohort: positive counts required");
    if (config.noise_sd < 0.0) throw invariant_error("generate_cohort: noise_sd must be nonnegative");

    ParcellationAtlas atlas = generate_atlas(config.n_regions, config.seed);
    SynthCohort out;
    out.connectome = generate_connectome(atlas, config.seed, config.profile);
    out.ground_truth = make_ground_truth(atlas, config.seed);
    const ParcellationAtlas& atl = out.connectome.atlas;
    const int n = config.n_regions;

    mlt::detail::ModelContext ctx = mlt::detail::make_context(out.connectome, out.ground_truth, Ablation::sc_fc);
    Eigen::MatrixXd a_cl = mlt::detail::build_closed_loop(ctx, out.ground_truth);
    Eigen::MatrixXd propagator = matrix_exponential(a_cl * config.interval_years);

    Eigen::VectorXd pattern = detail_synth::baseline_pattern(atl);

    // scan counts by quota, assigned in seeded shuffled subject order
    out.scan_count_histogram = detail_synth::quota_counts(config.scan_count_probs, config.n_subjects);
    std::vector<int> scan_count(static_cast<std::size_t>(config.n_subjects));
    {
        std::vector<int> order(static_cast<std::size_t>(config.n_subjects));
        for (int i = 0; i < config.n_subjects; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng = Rng(config.seed).stream(0x5c2a11ULL);
        shuffle_rng.shuffle(order);
        int at = 0;
        for (int k = 0; k < 5; ++k)
            for (int c = 0; c < out.scan_count_histogram[static_cast<std::size_t>(k)]; ++c)
                scan_count[static_cast<std::size_t>(order[static_cast<std::size_t>(at++)])] = k + 1;
    }

    Rng root(config.seed);
    std::vector<Subject> subjects;
    subjects.reserve(static_cast<std::size_t>(config.n_subjects));
    std::vector<double> total_change(static_cast<std::size_t>(config.n_subjects), 0.0);

    for (int si = 0; si < config.n_subjects; ++si) {
        Rng subj = root.stream(0x5abc7ULL, static_cast<std::uint64_t>(si));
        Subject s;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "S%04d", si);
        s.id = idbuf;

        SubjectCovariates cov;
        int n_scans = scan_count[static_cast<std::size_t>(si)];
        cov.age = std::floor(subj.uniform(config.age_lo, config.age_hi) * 100.0) / 100.0;
        cov.sex = subj.uniform01() < 0.48 ? Sex::male : Sex::female;
        cov.apoe4 = subj.uniform01() < 0.316 ? Apoe4::carrier : Apoe4::noncarrier;
        if (subj.uniform01() < 0.94) cov.abeta_pgml = std::clamp(subj.normal(195.0, 45.0), 80.0, 330.0);
        double dx_u = subj.uniform01();
        cov.diagnosis = dx_u < 0.29   ? Diagnosis::CN
                        : dx_u < 0.56 ? Diagnosis::SMC
                        : dx_u < 0.78 ? Diagnosis::EMCI
                        : dx_u < 0.90 ? Diagnosis::LMCI
                                      : Diagnosis::AD;

        // baseline field: per-subject scale plus a smooth low-rank jitter
        double scale = subj.uniform(0.85, 1.15);
        if (cov.diagnosis == Diagnosis::LMCI || cov.diagnosis == Diagnosis::AD) scale += 0.10;
        Eigen::Vector3d jdir(subj.normal(), subj.normal(), subj.normal());
        double jphase = subj.uniform(0.0, 6.283185307179586);
        Eigen::VectorXd x_true(n);
        for (int i = 0; i < n; ++i) {
            double jitter = 0.03 * std::cos(2.0 * jdir.dot(atl.region(i).sphere_xyz) + jphase);
            x_true(i) = std::max(0.2, scale * pattern(i) + jitter);
        }

        PropagationDecomposition dec;
        dec.subject_id = s.id;
        dec.subject_index = si;
        dec.contribution_s = Eigen::VectorXd::Zero(n);
        dec.contribution_f = Eigen::VectorXd::Zero(n);

        double age = cov.age;
        for (int k = 0; k < n_scans; ++k) {
            ScanRecord rec;
            rec.subject_id = s.id;
            rec.age = age;
            rec.covariates = cov;
            Eigen::VectorXd noise(n);
            for (int i = 0; i < n; ++i) noise(i) = config.noise_sd > 0.0 ? subj.normal(0.0, config.noise_sd) : 0.0;
            rec.suvr = (x_true + noise).cwiseMax(1e-3);
            s.scans.push_back(std::move(rec));
            if (k + 1 < n_scans) {
                PredictionOutput pred =
                    mlt::detail::predict_with_propagator(ctx, out.ground_truth, x_true, propagator);
                dec.contribution_s += pred.contribution_s;
                dec.contribution_f += pred.contribution_f;
                total_change[static_cast<std::size_t>(si)] +=
                    (pred.contribution_s + pred.contribution_f).mean();
                x_true = pred.x_hat1;
                age += config.interval_years;
            }
        }
        if (n_scans > 1) {
            dec.contribution_s /= (n_scans - 1);
            dec.contribution_f /= (n_scans - 1);
            total_change[static_cast<std::size_t>(si)] /= (n_scans - 1);
            out.true_decompositions.push_back(dec);
        }

        // MMSE: linear in the subject's predicted total tau change
        double mmse_raw = 29.0 - 30.0 * total_change[static_cast<std::size_t>(si)] + subj.normal(0.0, 1.2);
        cov.mmse = std::clamp(static_cast<int>(std::lround(mmse_raw)), 0, 30);
        for (auto& rec : s.scans) rec.covariates = cov;
        subjects.push_back(std::move(s));
    }
    out.cohort = Cohort(std::move(subjects));

    // planted dominance map from the population-mean baseline
    {
        PredictionOutput mean_pred =
            mlt::detail::predict_with_propagator(ctx, out.ground_truth, pattern, propagator);
        out.planted_margin = mean_pred.contribution_s - mean_pred.contribution_f;
        double margin = 0.2 * out.planted_margin.cwiseAbs().mean();
        out.planted_dominance.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double d = out.planted_margin(i);
            out.planted_dominance[static_cast<std::size_t>(i)] =
                d > margin ? DominanceLabel::SC : (d < -margin ? DominanceLabel::FC : DominanceLabel::none);
        }
    }

    // expression matrix: three planted genes track the dominance map
    {
        const int g = config.n_genes;
        Rng grng = root.stream(0x9e4eULL);
        Eigen::MatrixXd expr(n, g);
        Eigen::VectorXd signal = out.planted_margin;
        double s_sd = std::sqrt((signal.array() - signal.mean()).square().mean());
        if (s_sd > 0.0) signal = ((signal.array() - signal.mean()) / s_sd).matrix();
        for (int j = 0; j < g; ++j) {
            Eigen::VectorXd col(n);
            bool planted = j < 3;
            double sign = j == 1 ? -1.0 : 1.0;
            Eigen::Vector3d dir(grng.normal(), grng.normal(), grng.normal());
            double phase = grng.uniform(0.0, 6.283185307179586);
            for (int i = 0; i < n; ++i) {
                double smooth = std::cos(1.8 * dir.dot(atl.region(i).sphere_xyz) + phase);
                col(i) = planted ? sign * signal(i) + 0.35 * grng.normal() : smooth + 0.3 * grng.normal();
            }
            double lo = col.minCoeff(), hi = col.maxCoeff();
            if (hi > lo)
                expr.col(j) = ((col.array() - lo) / (hi - lo)).matrix();
            else
                expr.col(j).setZero();
        }
        out.expression.values = std::move(expr);
        for (int j = 0; j < g; ++j)
            out.expression.gene_names.push_back(
                j < static_cast<int>(default_gene_names.size())
                    ? default_gene_names[static_cast<std::size_t>(j)]
                    : "GENE" + std::to_string(j + 1));
        out.expression.validate();
    }
    return out;
}

/// Latent-factor mediation cohort for recovery testing: in planted regions
/// the X contribution proxies a shared latent, the M contribution carries it
/// onward, and MMSE is generated from the latent, so every planted region
/// exhibits a real indirect path. Non-planted regions are independent noise.
struct MediationSynth {
    std::vector<PropagationDecomposition> decomps;
    Cohort cohort;
    std::vector<bool> planted;
};

inline MediationSynth generate_mediation_cohort(int n_subjects, int n_regions, int n_planted, std::uint64_t seed) {
    if (n_planted > n_regions) throw invariant_error("generate_mediation_cohort: too many planted regions");
    Rng root(seed);
    MediationSynth out;
    out.planted.assign(static_cast<std::size_t>(n_regions), false);
    for (int r = 0; r < n_planted; ++r) out.planted[static_cast<std::size_t>(r * n_regions / n_planted)] = true;

    std::vector<Subject> subjects;
    for (int si = 0; si < n_subjects; ++si) {
        Rng subj = root.stream(0xed1aULL, static_cast<std::uint64_t>(si));
        double latent = subj.normal();
        PropagationDecomposition dec;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "M%04d", si);
        dec.subject_id = idbuf;
        dec.subject_index = si;
        dec.contribution_s = Eigen::VectorXd(n_regions);
        dec.contribution_f = Eigen::VectorXd(n_regions);
        for (int r = 0; r < n_regions; ++r) {
            if (out.planted[static_cast<std::size_t>(r)]) {
                dec.contribution_f(r) = latent + 0.25 * subj.normal();           // X
                dec.contribution_s(r) = 1.6 * latent + 0.25 * subj.normal();     // M = a * latent
            } else {
                dec.contribution_f(r) = subj.normal();
                dec.contribution_s(r) = subj.normal();
            }
        }
        out.decomps.push_back(dec);

        Subject s;
        s.id = idbuf;
        ScanRecord rec;
        rec.subject_id = s.id;
        rec.age = 60.0 + 30.0 * subj.uniform01();
        rec.suvr = Eigen::VectorXd::Constant(n_regions, 1.0);
        rec.covariates.age = rec.age;
        rec.covariates.sex = subj.uniform01() < 0.5 ? Sex::male : Sex::female;
        rec.covariates.apoe4 = subj.uniform01() < 0.3 ? Apoe4::carrier : Apoe4::noncarrier;
        rec.covariates.diagnosis = Diagnosis::CN;
        double mmse_raw = 24.0 + 2.2 * (1.6 * latent) + 0.8 * subj.normal();
        rec.covariates.mmse = std::clamp(static_cast<int>(std::lround(mmse_raw)), 0, 30);
        s.scans.push_back(std::move(rec));
        subjects.push_back(std::move(s));
    }
    out.cohort = Cohort(std::move(subjects));
    return out;
}

}  // namespace mlt::synth
