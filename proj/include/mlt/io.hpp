#pragma once

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "mlt/atlas.hpp"
#include "mlt/cohort.hpp"
#include "mlt/core.hpp"
#include "mlt/graph.hpp"
#include "mlt/model.hpp"
#include "mlt/stats.hpp"

namespace mlt::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// 17 significant digits: enough for bit-exact double round trips.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw invariant_error(where + ": cannot parse number from '" + s + "'");
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

/// Writes content to path atomically (temp file + rename) creating parent
/// directories as needed.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw invariant_error("cannot open '" + tmp.string() + "' for writing");
        out << content;
        if (!out) throw invariant_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw invariant_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Atlas CSV: header "index,label,lobe,x,y,z"
// ---------------------------------------------------------------------------

inline std::string atlas_to_csv(const ParcellationAtlas& atlas) {
    std::ostringstream out;
    out << "index,label,lobe,x,y,z\n";
    for (const Region& r : atlas.regions()) {
        out << r.index << ',' << r.label << ',' << to_string(r.lobe) << ',' << format_double(r.sphere_xyz.x()) << ','
            << format_double(r.sphere_xyz.y()) << ',' << format_double(r.sphere_xyz.z()) << '\n';
    }
    return out.str();
}

inline ParcellationAtlas atlas_from_csv(const std::string& content, const std::string& name = "atlas") {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw invariant_error(name + ": empty file");
    std::vector<Region> regions;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        std::string where = name + " line " + std::to_string(lineno);
        if (f.size() != 6) throw invariant_error(where + ": expected 6 fields, got " + std::to_string(f.size()));
        Region r;
        r.index = static_cast<int>(parse_double(f[0], where + " field 'index'"));
        r.label = f[1];
        r.lobe = lobe_from_string(f[2]);
        r.sphere_xyz = Eigen::Vector3d(parse_double(f[3], where + " field 'x'"), parse_double(f[4], where + " field 'y'"),
                                       parse_double(f[5], where + " field 'z'"));
        regions.push_back(std::move(r));
    }
    return ParcellationAtlas(std::move(regions));
}

// ---------------------------------------------------------------------------
// Dense matrix CSV (no header) and the {n, rows} JSON wrapper
// ---------------------------------------------------------------------------

inline std::string matrix_to_csv(const Eigen::MatrixXd& m) {
    std::ostringstream out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
    return out.str();
}

inline Eigen::MatrixXd matrix_from_csv(const std::string& content, const std::string& name = "matrix") {
    std::istringstream in(content);
    std::string line;
    std::vector<std::vector<double>> rows;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        std::vector<double> row;
        row.reserve(f.size());
        for (std::size_t j = 0; j < f.size(); ++j)
            row.push_back(parse_double(f[j], name + " line " + std::to_string(lineno) + " column " + std::to_string(j + 1)));
        if (!rows.empty() && row.size() != rows.front().size())
            throw invariant_error(name + " line " + std::to_string(lineno) + ": ragged row");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw invariant_error(name + ": empty matrix");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name = "matrix") {
    if (!j.contains("n") || !j.contains("rows")) throw invariant_error(name + ": JSON wrapper needs 'n' and 'rows'");
    int n = j.at("n").get<int>();
    const auto& rows = j.at("rows");
    if (static_cast<int>(rows.size()) != n) throw invariant_error(name + ": 'rows' count disagrees with n");
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != n)
            throw invariant_error(name + " row " + std::to_string(i) + ": expected " + std::to_string(n) + " values");
        for (int jj = 0; jj < n; ++jj) m(i, jj) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)].get<double>();
    }
    return m;
}

/// Loads a connectome weight matrix from dense CSV or the JSON wrapper
/// (by extension). Negative entries are clipped to zero with a warning
/// (functional connectomes may carry negative correlations).
inline WeightedGraph load_connectome(const fs::path& path) {
    Eigen::MatrixXd w;
    if (path.extension() == ".json") {
        w = matrix_from_json(json::parse(read_file(path)), path.filename().string());
    } else {
        w = matrix_from_csv(read_file(path), path.filename().string());
    }
    if (w.rows() != w.cols()) throw invariant_error(path.string() + ": connectome matrix must be square");
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            if (w(i, j) != w(j, i))
                throw invariant_error(path.string() + ": weight matrix not symmetric at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
    return sanitize_weights(std::move(w));
}

// ---------------------------------------------------------------------------
// Scan records: JSONL, one record per line
// ---------------------------------------------------------------------------

inline json covariates_to_json(const SubjectCovariates& c) {
    json j;
    j["sex"] = to_string(c.sex);
    j["apoe4"] = to_string(c.apoe4);
    j["abeta_pgml"] = c.abeta_pgml ? json(*c.abeta_pgml) : json(nullptr);
    j["diagnosis"] = to_string(c.diagnosis);
    j["mmse"] = c.mmse ? json(*c.mmse) : json(nullptr);
    return j;
}

inline SubjectCovariates covariates_from_json(const json& j, double age) {
    SubjectCovariates c;
    c.age = age;
    c.sex = sex_from_string(j.at("sex").get<std::string>());
    c.apoe4 = apoe4_from_string(j.at("apoe4").get<std::string>());
    if (j.contains("abeta_pgml") && !j.at("abeta_pgml").is_null()) c.abeta_pgml = j.at("abeta_pgml").get<double>();
    c.diagnosis = diagnosis_from_string(j.at("diagnosis").get<std::string>());
    if (j.contains("mmse") && !j.at("mmse").is_null()) c.mmse = j.at("mmse").get<int>();
    c.validate();
    return c;
}

inline std::string scans_to_jsonl(const Cohort& cohort) {
    std::ostringstream out;
    for (const Subject& s : cohort.subjects()) {
        for (const ScanRecord& rec : s.scans) {
            json j;
            j["subject_id"] = rec.subject_id;
            j["age"] = rec.age;
            j["suvr"] = std::vector<double>(rec.suvr.data(), rec.suvr.data() + rec.suvr.size());
            j["covariates"] = covariates_to_json(rec.covariates);
            out << j.dump() << '\n';
        }
    }
    return out.str();
}

inline Cohort scans_from_jsonl(const std::string& content, const std::string& name = "scans") {
    std::istringstream in(content);
    std::string line;
    std::vector<std::string> subject_order;
    std::map<std::string, Subject> by_id;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = name + " line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw invariant_error(where + ": invalid JSON (" + e.what() + ")");
        }
        try {
            ScanRecord rec;
            rec.subject_id = j.at("subject_id").get<std::string>();
            rec.age = j.at("age").get<double>();
            std::vector<double> suvr = j.at("suvr").get<std::vector<double>>();
            rec.suvr = Eigen::Map<Eigen::VectorXd>(suvr.data(), static_cast<Eigen::Index>(suvr.size()));
            rec.covariates = covariates_from_json(j.at("covariates"), rec.age);
            rec.validate();
            if (by_id.find(rec.subject_id) == by_id.end()) {
                subject_order.push_back(rec.subject_id);
                by_id[rec.subject_id].id = rec.subject_id;
            }
            by_id[rec.subject_id].scans.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw invariant_error(where + ": schema violation (" + std::string(e.what()) + ")");
        } catch (const invariant_error& e) {
            throw invariant_error(where + ": " + e.what());
        }
    }
    std::vector<Subject> subjects;
    subjects.reserve(subject_order.size());
    for (const std::string& id : subject_order) subjects.push_back(std::move(by_id[id]));
    return Cohort(std::move(subjects));
}

/// Loads and cross-validates a full cohort setup.
struct LoadedCohort {
    Cohort cohort;
    LayeredConnectome connectome;
};

inline LoadedCohort load_cohort(const fs::path& scans_path, const fs::path& sc_path, const fs::path& fc_path,
                                const fs::path& atlas_path) {
    ParcellationAtlas atlas = atlas_from_csv(read_file(atlas_path), atlas_path.filename().string());
    WeightedGraph sc = load_connectome(sc_path);
    WeightedGraph fc = load_connectome(fc_path);
    Cohort cohort = scans_from_jsonl(read_file(scans_path), scans_path.filename().string());
    if (sc.n() != atlas.n() || fc.n() != atlas.n())
        throw invariant_error("connectome size (SC " + std::to_string(sc.n()) + ", FC " + std::to_string(fc.n()) +
                              ") does not match atlas N = " + std::to_string(atlas.n()));
    if (cohort.n_subjects() > 0 && cohort.n_regions() != atlas.n())
        throw invariant_error("scan SUVR length " + std::to_string(cohort.n_regions()) +
                              " does not match atlas N = " + std::to_string(atlas.n()));
    return {std::move(cohort), LayeredConnectome(std::move(atlas), std::move(sc), std::move(fc))};
}

// ---------------------------------------------------------------------------
// Model parameter file, version mlt-params-v1
// ---------------------------------------------------------------------------

struct FittedModelFile {
    TransportParameters params;
    Ablation ablation = Ablation::sc_fc;
    std::uint64_t seed = 0;
    std::string gain_provenance = "learned";  ///< which source produced the gains
};

inline json vector_to_json(const Eigen::VectorXd& v) {
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    std::vector<double> v = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::MatrixXd matrix_from_json_rows(const json& j) {
    const std::size_t rows = j.size();
    if (rows == 0) return Eigen::MatrixXd(0, 0);
    const std::size_t cols = j[0].size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        if (j[i].size() != cols) throw invariant_error("params: ragged matrix rows");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
    }
    return m;
}

inline std::string params_to_json_string(const FittedModelFile& f) {
    const TransportParameters& p = f.params;
    json j;
    j["version"] = "mlt-params-v1";
    j["n"] = p.n();
    j["seed"] = f.seed;
    j["ablation"] = to_string(f.ablation);
    j["k_source"] = p.k_source == GainSource::learned ? "learned" : "riccati";
    j["gain_provenance"] = f.gain_provenance;
    j["shapes"] = {{"h_s", {p.n()}},        {"h_f", {p.n()}},        {"gate", {p.n()}},
                   {"m_s", {p.n(), p.n()}}, {"m_f", {p.n(), p.n()}}, {"k_s", {p.n(), p.n()}},
                   {"k_f", {p.n(), p.n()}}};
    j["h_s"] = vector_to_json(p.h_s);
    j["h_f"] = vector_to_json(p.h_f);
    j["gate"] = vector_to_json(p.gate);
    j["m_s"] = matrix_to_json(p.m_s);
    j["m_f"] = matrix_to_json(p.m_f);
    j["lambda_s"] = p.lambda_s;
    j["lambda_f"] = p.lambda_f;
    j["c"] = p.c;
    j["k_s"] = matrix_to_json(p.k_s);
    j["k_f"] = matrix_to_json(p.k_f);
    j["cost_q"] = vector_to_json(p.cost.q);
    j["cost_r"] = vector_to_json(p.cost.r);
    return j.dump(2) + "\n";
}

inline FittedModelFile params_from_json_string(const std::string& content, const std::string& name = "params") {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::exception& e) {
        throw invariant_error(name + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.contains("version") || j.at("version").get<std::string>() != "mlt-params-v1")
        throw invariant_error(name + ": unsupported or missing version (expected mlt-params-v1)");
    FittedModelFile f;
    try {
        f.seed = j.at("seed").get<std::uint64_t>();
        f.ablation = ablation_from_string(j.at("ablation").get<std::string>());
        f.gain_provenance = j.value("gain_provenance", "learned");
        TransportParameters& p = f.params;
        p.h_s = vector_from_json(j.at("h_s"));
        p.h_f = vector_from_json(j.at("h_f"));
        p.gate = vector_from_json(j.at("gate"));
        p.m_s = matrix_from_json_rows(j.at("m_s"));
        p.m_f = matrix_from_json_rows(j.at("m_f"));
        p.lambda_s = j.at("lambda_s").get<double>();
        p.lambda_f = j.at("lambda_f").get<double>();
        p.c = j.at("c").get<double>();
        p.k_source = j.at("k_source").get<std::string>() == "riccati" ? GainSource::riccati : GainSource::learned;
        p.k_s = matrix_from_json_rows(j.at("k_s"));
        p.k_f = matrix_from_json_rows(j.at("k_f"));
        p.cost = CostWeights(vector_from_json(j.at("cost_q")), vector_from_json(j.at("cost_r")));
        int n = j.at("n").get<int>();
        if (p.n() != n) throw invariant_error("declared n disagrees with vector lengths");
        p.validate();
    } catch (const json::exception& e) {
        throw invariant_error(name + ": schema violation (" + std::string(e.what()) + ")");
    } catch (const invariant_error& e) {
        throw invariant_error(name + ": " + e.what());
    }
    return f;
}

// ---------------------------------------------------------------------------
// Stat maps and expression matrices (CSV)
// ---------------------------------------------------------------------------

inline std::string stat_map_to_csv(const RegionalStatMap& map, const ParcellationAtlas& atlas) {
    if (map.values.size() != atlas.n()) throw invariant_error("stat_map_to_csv: length mismatch");
    std::ostringstream out;
    out << "region_index,label,value,kind\n";
    for (int i = 0; i < atlas.n(); ++i)
        out << i << ',' << atlas.region(i).label << ',' << format_double(map.values(i)) << ',' << to_string(map.kind)
            << '\n';
    return out.str();
}

inline RegionalStatMap stat_map_from_csv(const std::string& content, const std::string& name = "stat map") {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw invariant_error(name + ": empty file");
    std::vector<double> values;
    RegionalStatMap out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        std::string where = name + " line " + std::to_string(lineno);
        if (f.size() != 4) throw invariant_error(where + ": expected 4 fields");
        values.push_back(parse_double(f[2], where + " field 'value'"));
        if (f[3] == "t_value") out.kind = RegionalStatMap::Kind::t_value;
        else if (f[3] == "z_score") out.kind = RegionalStatMap::Kind::z_score;
        else if (f[3] == "rate_per_year") out.kind = RegionalStatMap::Kind::rate_per_year;
        else if (f[3] == "neglog10p") out.kind = RegionalStatMap::Kind::neglog10p;
        else throw invariant_error(where + ": unknown kind '" + f[3] + "'");
    }
    out.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return out;
}

inline std::string expression_to_csv(const ExpressionMatrix& expr) {
    std::ostringstream out;
    for (std::size_t j = 0; j < expr.gene_names.size(); ++j) {
        if (j) out << ',';
        out << expr.gene_names[j];
    }
    out << '\n';
    for (int i = 0; i < expr.n_regions(); ++i) {
        for (int j = 0; j < expr.n_genes(); ++j) {
            if (j) out << ',';
            out << format_double(expr.values(i, j));
        }
        out << '\n';
    }
    return out.str();
}

inline ExpressionMatrix expression_from_csv(const std::string& content, const std::string& name = "expression") {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw invariant_error(name + ": empty file");
    ExpressionMatrix expr;
    expr.gene_names = split_csv_line(line);
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        std::string where = name + " line " + std::to_string(lineno);
        if (f.size() != expr.gene_names.size())
            throw invariant_error(where + ": expected " + std::to_string(expr.gene_names.size()) + " fields");
        std::vector<double> row;
        for (std::size_t j = 0; j < f.size(); ++j) row.push_back(parse_double(f[j], where));
        rows.push_back(std::move(row));
    }
    expr.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(expr.gene_names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            expr.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    expr.validate();
    return expr;
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

/// Timestamp for manifests: honors SOURCE_DATE_EPOCH (reproducible-builds
/// convention) so pipelines can be byte-identical across reruns; falls back
/// to the wall clock.
inline std::string manifest_timestamp() {
    std::time_t t;
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
        t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
    } else {
        t = std::time(nullptr);
    }
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;
    std::string tool_version = version_string;
    std::string timestamp;
};

inline void write_manifest(const fs::path& out_dir, const RunManifest& m) {
    json j;
    j["command"] = m.command;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["inputs"] = m.input_digests;
    j["tool_version"] = m.tool_version;
    j["timestamp"] = m.timestamp.empty() ? manifest_timestamp() : m.timestamp;
    write_file_atomic(out_dir / ("manifest_" + m.command + ".json"), j.dump(2) + "\n");
}

}  // namespace mlt::io
