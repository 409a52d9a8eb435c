#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mkbf/koopman_ident.hpp"
#include "mkbf/microgrid.hpp"
#include "mkbf/predictor.hpp"

namespace mkbf {

/// Settings of one command-line run. Its hash is stamped on every output file.
struct RunConfig {
    std::string system_path;
    std::size_t scenarios = 20;
    double range = 0.8;
    std::uint64_t seed = 1;
    double augmentation = 0.0;
    std::size_t events = 0;
    double duration = 0.0;
    std::size_t vf_degree = 2;
    std::size_t pq_degree = 2;
    std::string vf_truncation = "auto";  // auto | rank | integer
    std::string pq_truncation = "auto";
    std::string vf_form = "implicit";
    std::string pq_form = "explicit";
    std::string regression = "increment";
    std::string output_dir = ".";
    double horizon = 0.0;

    nlohmann::json to_json() const;
};

/// 64-bit FNV-1a of the text, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);
/// Hash of the configuration together with the system file contents.
std::string config_hash(const RunConfig& cfg, const nlohmann::json& system);

/// Plot-ready long-format table: one row per (series, t, value).
struct LongTable {
    std::vector<std::string> series;
    std::vector<double> t;
    std::vector<double> value;

    void add(const std::string& name, const Eigen::Ref<const Eigen::VectorXd>& times,
             const Eigen::Ref<const Eigen::VectorXd>& values);
    /// Samples of one series in file order.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> get(const std::string& name) const;
    std::vector<std::string> names() const;
};

/// Writes `# key=value` header lines, then `series,t,value` rows.
void write_long_csv(const std::string& path, const LongTable& table,
                    const std::vector<std::pair<std::string, std::string>>& header);
LongTable read_long_csv(const std::string& path,
                        std::vector<std::pair<std::string, std::string>>* header = nullptr);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Segment CSV: series x1..x10 and u1..um over the segment times.
LongTable segment_table(const TrajectorySegment& seg);
TrajectorySegment segment_from_table(const LongTable& table, std::size_t n_states,
                                     std::size_t n_inputs);

struct DatasetFiles {
    nlohmann::json manifest;
    TrajectoryDataset vf;
    TrajectoryDataset pq;
};

/// Writes manifest.json and one CSV per segment under `dir`. Segment files also carry the
/// port output as y1, y2.
void write_dataset(const std::string& dir, const TrainingData& data, const nlohmann::json& meta,
                   const std::vector<std::pair<std::string, std::string>>& header);
DatasetFiles read_dataset(const std::string& dir);

/// Port voltage and current series of a prediction or simulation.
LongTable port_table(const Eigen::VectorXd& t, const std::vector<std::size_t>& nodes,
                     const Eigen::MatrixXcd& V, const Eigen::MatrixXcd& I);
/// Rebuilds port phasors from a port table; nodes are read from the series names.
void ports_from_table(const LongTable& table, Eigen::VectorXd& t, std::vector<std::size_t>& nodes,
                      Eigen::MatrixXcd& V, Eigen::MatrixXcd& I);

KbfModel load_model(const std::string& path);

}  // namespace mkbf
