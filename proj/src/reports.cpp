#include "piaa/reports.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "piaa/error.hpp"

namespace piaa {
namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

nlohmann::json eval_object(const EvalResult& r, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["config_digest"] = r.config_digest;
  j["map"] = r.map;
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class_ap.size(); ++c) {
    classes.push_back({{"class", c < names.size() ? names[c] : std::to_string(c)},
                       {"num_pos", r.num_pos[c]},
                       {"ap", optional_json(r.per_class_ap[c])}});
  }
  j["classes"] = classes;
  nlohmann::json undefined = nlohmann::json::array();
  for (const auto c : r.undefined_classes) {
    undefined.push_back(c < names.size() ? names[c] : std::to_string(c));
  }
  j["undefined_classes"] = undefined;
  return j;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string scores_csv(const BatchScores& batch, const std::vector<std::string>& image_ids,
                       const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "image_id";
  for (const char* field : {"s_patch", "s_cls", "s_fused"}) {
    for (const auto& name : class_names) out << ',' << csv_field(std::string(field) + ":" + name);
  }
  out << '\n';
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    const auto& s = batch.images[i];
    out << csv_field(image_ids.at(i));
    for (const Eigen::VectorXd* v : {&s.s_patch, &s.s_cls, &s.s_fused}) {
      for (Eigen::Index c = 0; c < v->size(); ++c) out << ',' << format_double((*v)(c));
    }
    out << '\n';
  }
  return out.str();
}

std::string scores_jsonl(const BatchScores& batch, const std::vector<std::string>& image_ids) {
  std::ostringstream out;
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    const auto& s = batch.images[i];
    nlohmann::json j;
    j["image_id"] = image_ids.at(i);
    j["s_patch"] = vector_json(s.s_patch);
    j["s_cls"] = vector_json(s.s_cls);
    j["s_fused"] = vector_json(s.s_fused);
    j["alpha"] = s.alpha;
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string patch_dump_csv(const BatchScores& batch, const std::vector<std::string>& image_ids,
                           const std::vector<std::string>& class_names) {
  if (batch.patch_probs.size() != batch.images.size()) {
    throw Error("patch probabilities were not retained for this batch");
  }
  std::ostringstream out;
  out << "image_id,patch";
  for (const auto& name : class_names) out << ',' << csv_field(name);
  out << '\n';
  for (std::size_t i = 0; i < batch.patch_probs.size(); ++i) {
    const auto& p = batch.patch_probs[i];
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      out << csv_field(image_ids.at(i)) << ',' << r;
      for (Eigen::Index c = 0; c < p.cols(); ++c) out << ',' << format_double(p(r, c));
      out << '\n';
    }
  }
  return out.str();
}

std::string eval_csv(const EvalResult& result, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "class,num_pos,ap\n";
  for (std::size_t c = 0; c < result.per_class_ap.size(); ++c) {
    out << csv_field(c < class_names.size() ? class_names[c] : std::to_string(c)) << ','
        << result.num_pos[c] << ',' << optional_cell(result.per_class_ap[c]) << '\n';
  }
  out << "mAP,," << format_double(result.map) << '\n';
  return out.str();
}

std::string eval_json(const EvalResult& result, const std::vector<std::string>& class_names) {
  return eval_object(result, class_names).dump(2) + "\n";
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "pvcl,paa,map,config_digest\n";
  for (const auto& r : rows) {
    out << (r.pvcl ? "on" : "off") << ',' << (r.paa ? "on" : "off") << ','
        << format_double(r.result.map) << ',' << r.result.config_digest << '\n';
  }
  return out.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows,
                          const std::vector<std::string>& class_names) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"pvcl", r.pvcl}, {"paa", r.paa}, {"result", eval_object(r.result, class_names)}});
  }
  return j.dump(2) + "\n";
}

std::string sweep_csv(const std::vector<SweepPoint>& curve, const std::string& param_name) {
  std::ostringstream out;
  out << param_name << ",map,config_digest\n";
  for (const auto& p : curve) {
    out << format_double(p.value) << ',' << format_double(p.result.map) << ','
        << p.result.config_digest << '\n';
  }
  return out.str();
}

std::string breakdown_csv(const std::vector<BreakdownRow>& rows) {
  std::ostringstream out;
  out << "class,ap_cls_only,ap_patch_only,ap_fused\n";
  for (const auto& r : rows) {
    out << csv_field(r.class_name) << ',' << optional_cell(r.ap_cls_only) << ','
        << optional_cell(r.ap_patch_only) << ',' << optional_cell(r.ap_fused) << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace piaa
