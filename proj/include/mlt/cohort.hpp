#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mlt/core.hpp"

namespace mlt {

enum class Sex { male, female };
enum class Apoe4 { carrier, noncarrier };
enum class Diagnosis { CN, SMC, EMCI, LMCI, AD };

inline const char* to_string(Sex s) { return s == Sex::male ? "M" : "F"; }
inline const char* to_string(Apoe4 a) { return a == Apoe4::carrier ? "carrier" : "noncarrier"; }
inline const char* to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::CN: return "CN";
        case Diagnosis::SMC: return "SMC";
        case Diagnosis::EMCI: return "EMCI";
        case Diagnosis::LMCI: return "LMCI";
        default: return "AD";
    }
}

inline Sex sex_from_string(const std::string& s) {
    if (s == "M" || s == "male") return Sex::male;
    if (s == "F" || s == "female") return Sex::female;
    throw invariant_error("unknown sex value '" + s + "'");
}

inline Apoe4 apoe4_from_string(const std::string& s) {
    if (s == "carrier") return Apoe4::carrier;
    if (s == "noncarrier") return Apoe4::noncarrier;
    throw invariant_error("unknown apoe4 value '" + s + "'");
}

inline Diagnosis diagnosis_from_string(const std::string& s) {
    if (s == "CN") return Diagnosis::CN;
    if (s == "SMC") return Diagnosis::SMC;
    if (s == "EMCI") return Diagnosis::EMCI;
    if (s == "LMCI") return Diagnosis::LMCI;
    if (s == "AD") return Diagnosis::AD;
    throw invariant_error("unknown diagnosis value '" + s + "'");
}

struct SubjectCovariates {
    double age = 0.0;  ///< age at scan, years
    Sex sex = Sex::female;
    Apoe4 apoe4 = Apoe4::noncarrier;
    std::optional<double> abeta_pgml;
    Diagnosis diagnosis = Diagnosis::CN;
    std::optional<int> mmse;

    void validate() const {
        if (mmse && (*mmse < 0 || *mmse > 30))
            throw invariant_error("mmse " + std::to_string(*mmse) + " outside [0, 30]");
    }
};

/// One longitudinal tau-PET observation.
struct ScanRecord {
    std::string subject_id;
    double age = 0.0;
    Eigen::VectorXd suvr;
    SubjectCovariates covariates;

    void validate() const {
        if (!(age >= 18.0 && age <= 120.0))
            throw invariant_error("subject '" + subject_id + "': age " + std::to_string(age) +
                                  " outside [18, 120]");
        for (Eigen::Index i = 0; i < suvr.size(); ++i) {
            if (!std::isfinite(suvr(i)) || suvr(i) <= 0.0)
                throw invariant_error("subject '" + subject_id + "': SUVR at region " + std::to_string(i) +
                                      " must be positive and finite, got " + std::to_string(suvr(i)));
        }
        covariates.validate();
    }
};

using LongitudinalScan = ScanRecord;

/// All scans of one participant, sorted by age.
struct Subject {
    std::string id;
    std::vector<ScanRecord> scans;

    const SubjectCovariates& covariates() const {
        if (scans.empty()) throw invariant_error("subject '" + id + "' has no scans");
        return scans.front().covariates;
    }
};

/// A consecutive baseline/follow-up pair used for model fitting.
struct TrainingPair {
    int subject_index = 0;
    Eigen::VectorXd x0;
    Eigen::VectorXd x1;
    double dt = 0.0;  ///< inter-scan interval, years
};

/// Validated in-memory cohort. Subjects with a single scan are retained
/// (they contribute to cross-sectional statistics) but produce no training
/// pairs.
class Cohort {
public:
    Cohort() = default;

    explicit Cohort(std::vector<Subject> subjects) : subjects_(std::move(subjects)) {
        for (auto& s : subjects_) {
            std::stable_sort(s.scans.begin(), s.scans.end(),
                             [](const ScanRecord& a, const ScanRecord& b) { return a.age < b.age; });
            for (auto& scan : s.scans) {
                scan.validate();
                if (n_regions_ < 0) n_regions_ = static_cast<int>(scan.suvr.size());
                if (scan.suvr.size() != n_regions_)
                    throw invariant_error("subject '" + s.id + "': SUVR length " +
                                          std::to_string(scan.suvr.size()) + " does not match cohort N = " +
                                          std::to_string(n_regions_));
            }
        }
    }

    int n_regions() const { return std::max(n_regions_, 0); }
    int n_subjects() const { return static_cast<int>(subjects_.size()); }
    const std::vector<Subject>& subjects() const { return subjects_; }
    const Subject& subject(int i) const { return subjects_.at(static_cast<std::size_t>(i)); }

    /// Consecutive-scan training pairs across all (or a subset of) subjects.
    std::vector<TrainingPair> pairs(const std::vector<int>* subject_subset = nullptr) const {
        std::vector<TrainingPair> out;
        auto emit = [&](int si) {
            const Subject& s = subjects_[static_cast<std::size_t>(si)];
            for (std::size_t k = 0; k + 1 < s.scans.size(); ++k) {
                double dt = s.scans[k + 1].age - s.scans[k].age;
                if (!(dt > 0.0))
                    throw invariant_error("subject '" + s.id + "': duplicate scan ages, interval must be positive");
                out.push_back({si, s.scans[k].suvr, s.scans[k + 1].suvr, dt});
            }
        };
        if (subject_subset) {
            for (int si : *subject_subset) emit(si);
        } else {
            for (int si = 0; si < n_subjects(); ++si) emit(si);
        }
        return out;
    }

private:
    std::vector<Subject> subjects_;
    int n_regions_ = -1;
};

}  // namespace mlt
