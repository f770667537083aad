#include "wgkv/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace wgkv {

using ordered_json = nlohmann::ordered_json;

std::string report_to_json(const RunReport& report, const std::string& config_echo_json) {
    ordered_json j;
    j["config"] = config_echo_json.empty() ? ordered_json(nullptr) : ordered_json::parse(config_echo_json);
    j["per_step"] = ordered_json::array();
    for (const auto& s : report.per_step)
        j["per_step"].push_back({{"step", s.step}, {"score_evals", s.score_evals}});
    j["cache"] = {{"resident_entries", report.cache.resident_entries},
                  {"admitted_fraction", report.cache.admitted_fraction},
                  {"pages_allocated", report.cache.pages_allocated}};
    j["per_head_admitted"] = report.per_head_admitted;
    j["outputs"] = report.outputs;
    if (report.l_distill) j["l_distill"] = *report.l_distill;
    return j.dump(2) + "\n";
}

namespace {

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string report_to_csv(const RunReport& report) {
    std::string out = "step,score_evals\n";
    for (const auto& s : report.per_step)
        out += std::to_string(s.step) + "," + std::to_string(s.score_evals) + "\n";
    return out;
}

std::string curve_to_csv(const std::vector<LossBreakdown>& curve) {
    std::string out = "step,l_distill,m_soft,l_total\n";
    for (size_t i = 0; i < curve.size(); ++i)
        out += std::to_string(i) + "," + fmt17(curve[i].l_distill) + "," + fmt17(curve[i].m_soft) + "," +
               fmt17(curve[i].l_total) + "\n";
    return out;
}

std::string pareto_to_csv(const std::vector<ParetoPoint>& points) {
    std::string out = "lambda,tau,val_loss,cache_frac\n";
    for (const auto& p : points)
        out += fmt17(p.lambda) + "," + fmt17(p.tau) + "," + fmt17(p.val_loss) + "," + fmt17(p.cache_frac) +
               "\n";
    return out;
}

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("atomic_write: cannot open " + tmp);
        os << content;
        if (!os) throw std::runtime_error("atomic_write: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("atomic_write: rename failed for " + path);
}

}  // namespace wgkv
