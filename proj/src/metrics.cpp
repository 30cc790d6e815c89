#include "xmodal/metrics.hpp"

#include <sstream>

#include "xmodal/util.hpp"

namespace xmodal {

std::string metrics_csv_text(const std::vector<IterationRecord>& history, std::size_t num_sources) {
    std::ostringstream os;
    os << "iteration,epoch,l_ti,l_d,l_ent,l_div,l_im,l_pl,l_ma,l_ms,total";
    for (std::size_t k = 0; k < num_sources; ++k) os << ",zeta_" << k;
    os << ",lr\n";
    for (const auto& rec : history) {
        if (rec.zeta.size() != num_sources) {
            throw ContractError("metrics: zeta length inconsistent with source count");
        }
        const auto& r = rec.report;
        os << rec.iteration << "," << rec.epoch << "," << format_double(r.l_ti) << "," << format_double(r.l_d)
           << "," << format_double(r.l_ent) << "," << format_double(r.l_div) << "," << format_double(r.l_im)
           << "," << format_double(r.l_pl) << "," << format_double(r.l_ma) << "," << format_double(r.l_ms)
           << "," << format_double(r.total);
        for (double z : rec.zeta) os << "," << format_double(z);
        os << "," << format_double(rec.lr_encoder) << "\n";
    }
    return os.str();
}

void write_metrics_csv(const std::string& path, const std::vector<IterationRecord>& history,
                       std::size_t num_sources) {
    write_file_bytes(path, metrics_csv_text(history, num_sources));
}

std::string accuracy_csv_text(const std::vector<std::pair<std::size_t, double>>& per_epoch) {
    std::ostringstream os;
    os << "epoch,accuracy\n";
    for (const auto& [epoch, acc] : per_epoch) os << epoch << "," << format_double(acc) << "\n";
    return os.str();
}

void write_accuracy_csv(const std::string& path, const std::vector<std::pair<std::size_t, double>>& per_epoch) {
    write_file_bytes(path, accuracy_csv_text(per_epoch));
}

std::string ablation_csv_text(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "arm,use_d,use_ti,accuracy\n";
    for (const auto& row : rows) {
        os << row.arm << "," << (row.use_d ? "true" : "false") << "," << (row.use_ti ? "true" : "false") << ","
           << format_double(row.accuracy) << "\n";
    }
    return os.str();
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    write_file_bytes(path, ablation_csv_text(rows));
}

}  // namespace xmodal
