#include "scd2te/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace scd2te {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

long long to_integer(const std::string& text) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw InvalidArgument("'" + text + "' is not an integer");
  return v;
}

int to_int(const std::string& text) {
  const long long v = to_integer(text);
  if (v < -2147483647LL || v > 2147483647LL) throw InvalidArgument("'" + text + "' is out of range");
  return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("'" + text + "' is not an unsigned integer");
  }
  return v;
}

double to_double(const std::string& text) {
  std::istringstream in(text);
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof()) throw InvalidArgument("'" + text + "' is not a number");
  return v;
}

bool to_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw InvalidArgument("'" + text + "' is not a boolean (true|false)");
}

std::vector<int> to_int_list(const std::string& text) {
  std::vector<int> out;
  for (const std::string& item : split(text, ',')) out.push_back(to_int(item));
  if (out.empty()) throw InvalidArgument("empty list");
  return out;
}

std::vector<Offset> to_offsets(const std::string& text) {
  std::vector<Offset> out;
  if (text == "none") return out;
  for (const std::string& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2) throw InvalidArgument("offset '" + item + "' is not dx:dy");
    out.push_back({to_int(parts[0]), to_int(parts[1])});
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_offsets(const std::vector<Offset>& offsets) {
  if (offsets.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    s += (i ? "," : "") + std::to_string(offsets[i].dx) + ":" + std::to_string(offsets[i].dy);
  }
  return s;
}

struct Field {
  std::string description;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;

const FieldTable& fields() {
  static const FieldTable table = [] {
    FieldTable t;
    auto add = [&](std::string name, std::string description, auto set, auto get) {
      t.push_back({std::move(name), Field{std::move(description), set, get}});
    };
    add("layer_count", "number of layers L",
        [](RunConfig& c, const std::string& v) { c.model.layer_count = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.layer_count); });
    add("filter_sides", "odd filter side per layer (comma list or one value for all layers)",
        [](RunConfig& c, const std::string& v) { c.model.filter_sides = to_int_list(v); },
        [](const RunConfig& c) { return join(c.model.filter_sides); });
    add("atom_counts", "dictionary atoms per layer",
        [](RunConfig& c, const std::string& v) { c.model.atom_counts = to_int_list(v); },
        [](const RunConfig& c) { return join(c.model.atom_counts); });
    add("compressed_channels", "channels kept by the per-pixel projection, per layer",
        [](RunConfig& c, const std::string& v) { c.model.compressed_channels = to_int_list(v); },
        [](const RunConfig& c) { return join(c.model.compressed_channels); });
    add("context_offsets", "context sampling offsets as dx:dy pairs, or none",
        [](RunConfig& c, const std::string& v) { c.model.context_offsets = to_offsets(v); },
        [](const RunConfig& c) { return format_offsets(c.model.context_offsets); });
    add("samples_per_layer", "training pixels drawn per layer for the ensemble",
        [](RunConfig& c, const std::string& v) { c.model.samples_per_layer = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.samples_per_layer); });
    add("compressor_samples", "training pixels used to fit the projection",
        [](RunConfig& c, const std::string& v) { c.model.compressor_samples = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.compressor_samples); });
    add("threshold", "score threshold for the output mask, in (0,1)",
        [](RunConfig& c, const std::string& v) { c.model.threshold = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.threshold); });
    add("color_mode", "luminance or per_channel",
        [](RunConfig& c, const std::string& v) { c.model.color_mode = parse_color_mode(v); },
        [](const RunConfig& c) { return to_string(c.model.color_mode); });
    add("reuse_mode", "none, previous_only or dense",
        [](RunConfig& c, const std::string& v) { c.model.reuse_mode = parse_reuse_mode(v); },
        [](const RunConfig& c) { return to_string(c.model.reuse_mode); });
    add("highpass_radius", "layer inputs are encoded minus their local mean over a (2r+1)^2 box; 0 disables",
        [](RunConfig& c, const std::string& v) { c.model.highpass_radius = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.highpass_radius); });
    add("append_input", "append each layer's input planes to its features (true|false)",
        [](RunConfig& c, const std::string& v) { c.model.append_input = to_bool(v); },
        [](const RunConfig& c) { return std::string(c.model.append_input ? "true" : "false"); });
    add("seed", "master random seed (the --seed flag takes precedence)",
        [](RunConfig& c, const std::string& v) { c.model.seed = to_u64(v); },
        [](const RunConfig& c) { return std::to_string(c.model.seed); });
    add("lambda", "l1 penalty of the sparse codes",
        [](RunConfig& c, const std::string& v) { c.model.sparse.lambda = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.sparse.lambda); });
    add("max_inner_iters", "coordinate descent sweeps per encode",
        [](RunConfig& c, const std::string& v) { c.model.sparse.max_inner_iters = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.sparse.max_inner_iters); });
    add("tol", "relative objective decrease that stops encoding",
        [](RunConfig& c, const std::string& v) { c.model.sparse.tol = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.sparse.tol); });
    add("sparsity_ceiling", "largest allowed fraction of nonzero codes",
        [](RunConfig& c, const std::string& v) { c.model.sparse.sparsity_ceiling = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.sparse.sparsity_ceiling); });
    add("dict_epochs", "dictionary learning epochs",
        [](RunConfig& c, const std::string& v) { c.model.sparse.dict_epochs = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.sparse.dict_epochs); });
    add("patches_per_epoch", "training windows per dictionary epoch",
        [](RunConfig& c, const std::string& v) { c.model.sparse.patches_per_epoch = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.sparse.patches_per_epoch); });
    add("step_size", "fraction of the per-atom Newton step tried first in dictionary updates",
        [](RunConfig& c, const std::string& v) { c.model.sparse.step_size = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.sparse.step_size); });
    add("tree_count", "trees per layer ensemble",
        [](RunConfig& c, const std::string& v) { c.model.ensemble.tree_count = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.ensemble.tree_count); });
    add("xi", "l2 penalty on leaf responses",
        [](RunConfig& c, const std::string& v) { c.model.ensemble.xi = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.ensemble.xi); });
    add("zeta", "per-leaf cost subtracted from every split gain",
        [](RunConfig& c, const std::string& v) { c.model.ensemble.zeta = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.ensemble.zeta); });
    add("max_depth", "maximum tree depth",
        [](RunConfig& c, const std::string& v) { c.model.ensemble.max_depth = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.ensemble.max_depth); });
    add("subsample", "fraction of samples each tree is grown on, in (0,1]",
        [](RunConfig& c, const std::string& v) { c.model.ensemble.subsample_ratio = to_double(v); },
        [](const RunConfig& c) { return format_double(c.model.ensemble.subsample_ratio); });
    add("min_samples_leaf", "smallest leaf size",
        [](RunConfig& c, const std::string& v) { c.model.ensemble.min_samples_leaf = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.model.ensemble.min_samples_leaf); });
    add("vote_mode", "additive (weights 1) or averaged (weights 1/M)",
        [](RunConfig& c, const std::string& v) {
          if (v == "additive") {
            c.model.ensemble.mode = VoteMode::additive;
          } else if (v == "averaged") {
            c.model.ensemble.mode = VoteMode::averaged;
          } else {
            throw InvalidArgument("unknown vote mode '" + v + "' (additive|averaged)");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.model.ensemble.mode == VoteMode::additive ? "additive" : "averaged");
        });
    add("output_dir", "directory for command outputs",
        [](RunConfig& c, const std::string& v) { c.output_dir = v; },
        [](const RunConfig& c) { return c.output_dir.string(); });
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    const RunConfig defaults;
    std::vector<ConfigKey> out;
    for (const auto& [name, field] : fields()) out.push_back({name, field.get(defaults), field.description});
    return out;
  }();
  return keys;
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const auto& entry) { return entry.first == key; });
    if (it == table.end()) throw ParseError("unknown key '" + key + "'", line_no);
    if (!seen.insert(key).second) throw ParseError("key '" + key + "' given twice", line_no);
    if (value.empty()) throw ParseError("key '" + key + "' has no value", line_no);
    try {
      it->second.set(cfg, value);
    } catch (const InvalidArgument& e) {
      throw ParseError(key + ": " + e.what(), line_no);
    }
  }
  // Lists left at their defaults follow layer_count; given lists of one value repeat.
  const std::pair<const char*, std::vector<int>*> lists[] = {
      {"filter_sides", &cfg.model.filter_sides},
      {"atom_counts", &cfg.model.atom_counts},
      {"compressed_channels", &cfg.model.compressed_channels}};
  for (const auto& [name, list] : lists) {
    if (cfg.model.layer_count < 1) break;
    const auto n = static_cast<std::size_t>(cfg.model.layer_count);
    if (seen.count(name) == 0 || list->size() == 1) list->resize(n, list->back());
  }
  try {
    cfg.model.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open config file");
  try {
    return parse_run_config(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_run_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& [name, field] : fields()) {
    out << "# " << field.description << '\n' << name << " = " << field.get(cfg) << '\n';
  }
}

}  // namespace scd2te
