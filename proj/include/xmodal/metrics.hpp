#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xmodal/transfer.hpp"

namespace xmodal {

// metrics.csv: one row per iteration, fixed column order
//   iteration,epoch,l_ti,l_d,l_ent,l_div,l_im,l_pl,l_ma,l_ms,total,
//   zeta_0..zeta_{n-1},lr
std::string metrics_csv_text(const std::vector<IterationRecord>& history, std::size_t num_sources);
void write_metrics_csv(const std::string& path, const std::vector<IterationRecord>& history,
                       std::size_t num_sources);

// accuracy.csv: one row per epoch: epoch,accuracy
std::string accuracy_csv_text(const std::vector<std::pair<std::size_t, double>>& per_epoch);
void write_accuracy_csv(const std::string& path, const std::vector<std::pair<std::size_t, double>>& per_epoch);

// ablation_table.csv: arm,use_d,use_ti,accuracy
std::string ablation_csv_text(const std::vector<AblationRow>& rows);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace xmodal
