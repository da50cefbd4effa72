#include "fdepth/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fdepth {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return x;
}

long long to_int(const std::string& v) {
  std::size_t used = 0;
  const long long x = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("expected a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

using Setter = std::function<void(const std::string&)>;

std::map<std::string, Setter> arch_setters(ArchConfig& a) {
  return {
      {"arch.num_levels", [&](const std::string& v) { a.num_levels = static_cast<int>(to_int(v)); }},
      {"arch.widths",
       [&](const std::string& v) {
         a.widths.clear();
         for (const auto& item : split_list(v)) a.widths.push_back(static_cast<int>(to_int(item)));
       }},
      {"arch.kernel", [&](const std::string& v) { a.kernel = static_cast<int>(to_int(v)); }},
      {"arch.reservation", [&](const std::string& v) { a.reservation = to_double(v); }},
      {"arch.coordconv", [&](const std::string& v) { a.coordconv = to_bool(v); }},
      {"arch.fusion", [&](const std::string& v) { a.fusion = to_bool(v); }},
      {"arch.refinement", [&](const std::string& v) { a.refinement = to_bool(v); }},
      {"arch.d_max", [&](const std::string& v) { a.d_max = to_double(v); }},
  };
}

void parse_lines(std::istream& in, const std::map<std::string, Setter>& setters) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second(value);
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad value '" + value +
                                  "' for " + key);
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  arch.validate();
  loss.validate();
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  for (int e : stage_epochs) {
    if (e < 0) throw std::invalid_argument("stage epochs must be non-negative");
  }
  if (dataset_dir.empty()) throw std::invalid_argument("train.data is not set");
  if (checkpoint_dir.empty()) throw std::invalid_argument("train.checkpoint_dir is not set");
}

TrainConfig parse_train_config(std::istream& in, const fs::path& base_dir) {
  TrainConfig c;
  const auto path_value = [&](const std::string& v) {
    const fs::path p(v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  auto setters = arch_setters(c.arch);
  const std::map<std::string, Setter> train{
      {"train.lr", [&](const std::string& v) { c.adam.lr = to_double(v); }},
      {"train.beta1", [&](const std::string& v) { c.adam.beta1 = to_double(v); }},
      {"train.beta2", [&](const std::string& v) { c.adam.beta2 = to_double(v); }},
      {"train.eps", [&](const std::string& v) { c.adam.eps = to_double(v); }},
      {"train.batch_size", [&](const std::string& v) { c.batch_size = static_cast<int>(to_int(v)); }},
      {"train.epochs",
       [&](const std::string& v) {
         const auto items = split_list(v);
         if (items.size() != 3) throw std::invalid_argument("expected three stage epoch counts");
         for (std::size_t k = 0; k < 3; ++k) c.stage_epochs[k] = static_cast<int>(to_int(items[k]));
       }},
      {"train.data", [&](const std::string& v) { c.dataset_dir = path_value(v); }},
      {"train.checkpoint_dir", [&](const std::string& v) { c.checkpoint_dir = path_value(v); }},
      {"train.seed", [&](const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"loss.alpha_ssim", [&](const std::string& v) { c.loss.alpha_ssim = to_double(v); }},
      {"loss.smoothness", [&](const std::string& v) { c.loss.smoothness = to_double(v); }},
      {"loss.lr_consistency", [&](const std::string& v) { c.loss.lr_consistency = to_double(v); }},
      {"loss.occlusion", [&](const std::string& v) { c.loss.occlusion = to_double(v); }},
      {"loss.scale_factors",
       [&](const std::string& v) {
         const auto items = split_list(v);
         if (items.size() != c.loss.scale_factors.size()) throw std::invalid_argument("expected four factors");
         for (std::size_t k = 0; k < items.size(); ++k) c.loss.scale_factors[k] = to_double(items[k]);
       }},
  };
  setters.insert(train.begin(), train.end());
  parse_lines(in, setters);
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open config");
  return parse_train_config(f, path.parent_path());
}

std::string format_arch_config(const ArchConfig& a) {
  std::ostringstream out;
  out.precision(17);
  out << "arch.num_levels = " << a.num_levels << "\n";
  out << "arch.widths = ";
  for (std::size_t k = 0; k < a.widths.size(); ++k) out << (k ? "," : "") << a.widths[k];
  out << "\n";
  out << "arch.kernel = " << a.kernel << "\n";
  out << "arch.reservation = " << a.reservation << "\n";
  out << "arch.coordconv = " << (a.coordconv ? "true" : "false") << "\n";
  out << "arch.fusion = " << (a.fusion ? "true" : "false") << "\n";
  out << "arch.refinement = " << (a.refinement ? "true" : "false") << "\n";
  out << "arch.d_max = " << a.d_max << "\n";
  return out.str();
}

ArchConfig parse_arch_config(std::istream& in) {
  ArchConfig a;
  parse_lines(in, arch_setters(a));
  a.validate();
  return a;
}

}  // namespace fdepth
