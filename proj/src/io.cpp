#include "mkbf/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mkbf/errors.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::VectorXd;

namespace fs = std::filesystem;

nlohmann::json RunConfig::to_json() const {
    return {{"system", system_path},         {"scenarios", scenarios},
            {"range", range},                {"seed", seed},
            {"augmentation", augmentation},  {"events", events},
            {"duration", duration},          {"vf_degree", vf_degree},
            {"pq_degree", pq_degree},        {"vf_truncation", vf_truncation},
            {"pq_truncation", pq_truncation}, {"vf_form", vf_form},
            {"pq_form", pq_form},            {"regression", regression},
            {"horizon", horizon}};
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const RunConfig& cfg, const nlohmann::json& system) {
    nlohmann::json j = cfg.to_json();
    j.erase("system");  // the path may differ between machines; the contents matter
    j["system_contents"] = system;
    return fnv1a_hex(j.dump());
}

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw InvalidArgument("bad number '" + std::string(s) + "' in " + where);
    return v;
}

std::ofstream open_out(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path);
    return out;
}

}  // namespace

void LongTable::add(const std::string& name, const Eigen::Ref<const VectorXd>& times,
                    const Eigen::Ref<const VectorXd>& values) {
    if (times.size() != values.size())
        throw InvalidArgument("series " + name + " has mismatched time and value lengths");
    for (Index k = 0; k < times.size(); ++k) {
        series.push_back(name);
        t.push_back(times[k]);
        value.push_back(values[k]);
    }
}

std::pair<VectorXd, VectorXd> LongTable::get(const std::string& name) const {
    std::vector<double> tt, vv;
    for (std::size_t i = 0; i < series.size(); ++i)
        if (series[i] == name) {
            tt.push_back(t[i]);
            vv.push_back(value[i]);
        }
    if (tt.empty()) throw InvalidArgument("series " + name + " not found");
    return {Eigen::Map<VectorXd>(tt.data(), static_cast<Index>(tt.size())),
            Eigen::Map<VectorXd>(vv.data(), static_cast<Index>(vv.size()))};
}

std::vector<std::string> LongTable::names() const {
    std::vector<std::string> out;
    for (const auto& s : series)
        if (out.empty() || out.back() != s) {
            bool seen = false;
            for (const auto& o : out) seen = seen || o == s;
            if (!seen) out.push_back(s);
        }
    return out;
}

void write_long_csv(const std::string& path, const LongTable& table,
                    const std::vector<std::pair<std::string, std::string>>& header) {
    auto out = open_out(path);
    for (const auto& [k, v] : header) out << "# " << k << '=' << v << '\n';
    out << "series,t,value\n";
    for (std::size_t i = 0; i < table.series.size(); ++i)
        out << table.series[i] << ',' << format_double(table.t[i]) << ','
            << format_double(table.value[i]) << '\n';
}

LongTable read_long_csv(const std::string& path,
                        std::vector<std::pair<std::string, std::string>>* header) {
    std::ifstream in(path);
    if (!in) throw MissingFileError(path);
    LongTable table;
    std::string line;
    bool seen_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (header) {
                const auto eq = line.find('=');
                if (eq != std::string::npos && line.size() > 2)
                    header->emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
            }
            continue;
        }
        if (!seen_header) {
            if (line != "series,t,value") throw InvalidArgument(path + " is not a long-format CSV");
            seen_header = true;
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw InvalidArgument("malformed row in " + path);
        table.series.push_back(line.substr(0, c1));
        table.t.push_back(parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1), path));
        table.value.push_back(parse_double(std::string_view(line).substr(c2 + 1), path));
    }
    if (!seen_header) throw InvalidArgument(path + " has no CSV header");
    return table;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    auto out = open_out(path);
    out << j.dump(1) << '\n';
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError(path);
    return nlohmann::json::parse(in);
}

LongTable segment_table(const TrajectorySegment& seg) {
    LongTable table;
    for (Index i = 0; i < seg.states.rows(); ++i)
        table.add("x" + std::to_string(i + 1), seg.times, seg.states.row(i).transpose());
    for (Index i = 0; i < seg.inputs.rows(); ++i)
        table.add("u" + std::to_string(i + 1), seg.times, seg.inputs.row(i).transpose());
    return table;
}

TrajectorySegment segment_from_table(const LongTable& table, std::size_t n_states,
                                     std::size_t n_inputs) {
    TrajectorySegment seg;
    for (std::size_t i = 0; i < n_states + n_inputs; ++i) {
        const bool is_state = i < n_states;
        const auto name = is_state ? "x" + std::to_string(i + 1) : "u" + std::to_string(i - n_states + 1);
        auto [t, v] = table.get(name);
        if (i == 0) {
            seg.times = t;
            seg.states.resize(static_cast<Index>(n_states), t.size());
            seg.inputs.resize(static_cast<Index>(n_inputs), t.size());
        } else if (t.size() != seg.times.size()) {
            throw InvalidArgument("series " + name + " has a different length");
        }
        if (is_state)
            seg.states.row(static_cast<Index>(i)) = v.transpose();
        else
            seg.inputs.row(static_cast<Index>(i - n_states)) = v.transpose();
    }
    return seg;
}

void write_dataset(const std::string& dir, const TrainingData& data, const nlohmann::json& meta,
                   const std::vector<std::pair<std::string, std::string>>& header) {
    nlohmann::json manifest = meta;
    manifest["dt"] = data.vf.dt;
    manifest["n_states"] = kDerStates;
    manifest["vf_inputs"] = data.vf.n_inputs;
    manifest["pq_inputs"] = data.pq.n_inputs;
    auto segments = nlohmann::json::array();
    const std::size_t n_scen = data.results.size();
    const std::size_t vf_per = n_scen ? data.vf.segments.size() / n_scen : 0;
    const std::size_t pq_per = n_scen ? data.pq.segments.size() / n_scen : 0;
    auto emit = [&](const TrajectoryDataset& ds, const char* type, std::size_t per) {
        for (std::size_t k = 0; k < ds.segments.size(); ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "%s_s%03zu_u%zu.csv", type, k / per, k % per);
            const auto& seg = ds.segments[k];
            auto table = segment_table(seg);
            // Port output of the unit: filter voltage for Vf, output current for PQ.
            const Index out_row = std::string(type) == "vf" ? 6 : 8;
            table.add("y1", seg.times, seg.states.row(out_row).transpose());
            table.add("y2", seg.times, seg.states.row(out_row + 1).transpose());
            write_long_csv((fs::path(dir) / name).string(), table, header);
            segments.push_back({{"file", name},
                                {"type", type},
                                {"scenario", k / per},
                                {"unit", k % per},
                                {"frame_angle", seg.frame_angle},
                                {"samples", seg.samples()}});
        }
    };
    if (vf_per) emit(data.vf, "vf", vf_per);
    if (pq_per) emit(data.pq, "pq", pq_per);
    manifest["segments"] = std::move(segments);
    write_json((fs::path(dir) / "manifest.json").string(), manifest);
}

DatasetFiles read_dataset(const std::string& dir) {
    DatasetFiles out;
    out.manifest = read_json((fs::path(dir) / "manifest.json").string());
    const auto& m = out.manifest;
    const auto n = m.at("n_states").get<std::size_t>();
    out.vf.dt = out.pq.dt = m.at("dt").get<double>();
    out.vf.n_states = out.pq.n_states = n;
    out.vf.n_inputs = m.at("vf_inputs").get<std::size_t>();
    out.pq.n_inputs = m.at("pq_inputs").get<std::size_t>();
    for (const auto& s : m.at("segments")) {
        const bool vf = s.at("type").get<std::string>() == "vf";
        auto& ds = vf ? out.vf : out.pq;
        const auto table = read_long_csv((fs::path(dir) / s.at("file").get<std::string>()).string());
        auto seg = segment_from_table(table, n, ds.n_inputs);
        seg.frame_angle = s.value("frame_angle", 0.0);
        ds.segments.push_back(std::move(seg));
    }
    return out;
}

LongTable port_table(const VectorXd& t, const std::vector<std::size_t>& nodes, const MatrixXcd& V,
                     const MatrixXcd& I) {
    LongTable table;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
        const auto row = static_cast<Index>(p);
        const auto id = std::to_string(nodes[p]);
        table.add("V" + id + "_re", t, V.row(row).real().transpose());
        table.add("V" + id + "_im", t, V.row(row).imag().transpose());
        table.add("V" + id + "_abs", t, V.row(row).cwiseAbs().transpose());
        table.add("I" + id + "_re", t, I.row(row).real().transpose());
        table.add("I" + id + "_im", t, I.row(row).imag().transpose());
    }
    return table;
}

void ports_from_table(const LongTable& table, VectorXd& t, std::vector<std::size_t>& nodes,
                      MatrixXcd& V, MatrixXcd& I) {
    nodes.clear();
    for (const auto& name : table.names())
        if (name.size() > 4 && name[0] == 'V' && name.ends_with("_re"))
            nodes.push_back(static_cast<std::size_t>(std::stoul(name.substr(1, name.size() - 4))));
    if (nodes.empty()) throw InvalidArgument("table has no port voltage series");
    for (std::size_t p = 0; p < nodes.size(); ++p) {
        const auto id = std::to_string(nodes[p]);
        const auto [tv, vr] = table.get("V" + id + "_re");
        const auto vi = table.get("V" + id + "_im").second;
        const auto ir = table.get("I" + id + "_re").second;
        const auto ii = table.get("I" + id + "_im").second;
        if (p == 0) {
            t = tv;
            V.resize(static_cast<Index>(nodes.size()), t.size());
            I.resize(static_cast<Index>(nodes.size()), t.size());
        }
        if (vr.size() != t.size() || vi.size() != t.size() || ir.size() != t.size() ||
            ii.size() != t.size())
            throw InvalidArgument("port series of node " + id + " have different lengths");
        const auto row = static_cast<Index>(p);
        for (Index k = 0; k < t.size(); ++k) {
            V(row, k) = Complex(vr[k], vi[k]);
            I(row, k) = Complex(ir[k], ii[k]);
        }
    }
}

KbfModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError(path);
    return nlohmann::json::parse(in).get<KbfModel>();
}

}  // namespace mkbf
