#pragma once

// Fixed-column CSV / JSON renderings of scores and evaluation results.
// Doubles are printed with 17 significant digits so reports round-trip.

#include <filesystem>
#include <string>
#include <vector>

#include "piaa/eval.hpp"
#include "piaa/paa.hpp"

namespace piaa {

// image_id, s_patch:<class>..., s_cls:<class>..., s_fused:<class>...
std::string scores_csv(const BatchScores& batch, const std::vector<std::string>& image_ids,
                       const std::vector<std::string>& class_names);
// One {"image_id", "s_patch", "s_cls", "s_fused"} object per line.
std::string scores_jsonl(const BatchScores& batch, const std::vector<std::string>& image_ids);
// image_id, patch, <class>... ; requires batch.patch_probs.
std::string patch_dump_csv(const BatchScores& batch, const std::vector<std::string>& image_ids,
                           const std::vector<std::string>& class_names);

// class, num_pos, ap ; undefined APs are left empty; final row "mAP".
std::string eval_csv(const EvalResult& result, const std::vector<std::string>& class_names);
std::string eval_json(const EvalResult& result, const std::vector<std::string>& class_names);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows,
                          const std::vector<std::string>& class_names);
std::string sweep_csv(const std::vector<SweepPoint>& curve, const std::string& param_name);
std::string breakdown_csv(const std::vector<BreakdownRow>& rows);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string format_double(double v);

}  // namespace piaa
