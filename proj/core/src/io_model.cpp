#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scd2te/io.hpp"

namespace scd2te {
namespace {

constexpr char kMagic[6] = {'S', 'C', 'D', '2', 'T', 'E'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void count(std::size_t v) {
    if (v > 0xffffffffu) throw InvalidArgument("count does not fit in 32 bits");
    u32(static_cast<std::uint32_t>(v));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const std::vector<double>& v) {
    count(v.size());
    for (double d : v) f64(d);
  }
  void block(const char tag[4], const Writer& payload) {
    bytes_.insert(bytes_.end(), tag, tag + 4);
    count(payload.bytes_.size());
    bytes_.insert(bytes_.end(), payload.bytes_.begin(), payload.bytes_.end());
    u32(static_cast<std::uint32_t>(crc32(0L, payload.bytes_.data(),
                                         static_cast<uInt>(payload.bytes_.size()))));
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string where)
      : data_(data), size_(size), where_(std::move(where)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  int small_int() {
    const std::uint32_t v = u32();
    if (v > 0x7fffffffu) fail("integer out of range");
    return static_cast<int>(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s() {
    const std::size_t n = u32();
    if (n > remaining() / 8) fail("array length exceeds block size");
    std::vector<double> v(n);
    for (double& d : v) d = f64();
    return v;
  }
  std::vector<int> ints() {
    const std::size_t n = u32();
    if (n > remaining() / 4) fail("array length exceeds block size");
    std::vector<int> v(n);
    for (int& d : v) d = small_int();
    return v;
  }
  std::size_t remaining() const noexcept { return size_ - pos_; }
  const std::uint8_t* take(std::size_t n) {
    if (n > remaining()) fail("truncated");
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  void finish() const {
    if (remaining() != 0) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw IntegrityError("model file block " + where_ + ": " + what);
  }

  // Next checksummed block; verifies tag and CRC.
  Reader block(const char expected[4], const std::string& label) {
    const std::string name = label.empty() ? std::string(expected, 4) : label;
    if (remaining() < 8) throw IntegrityError("model file block " + name + ": truncated header");
    const auto* tag = take(4);
    if (std::memcmp(tag, expected, 4) != 0) {
      throw IntegrityError("model file block " + name + ": unexpected tag '" +
                           std::string(reinterpret_cast<const char*>(tag), 4) + "'");
    }
    const std::size_t len = u32();
    if (len + 4 > remaining()) throw IntegrityError("model file block " + name + ": truncated");
    const auto* payload = take(len);
    const std::uint32_t stored = u32();
    const auto actual = static_cast<std::uint32_t>(crc32(0L, payload, static_cast<uInt>(len)));
    if (stored != actual) throw IntegrityError("model file block " + name + ": checksum mismatch");
    return Reader(payload, len, name);
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string where_;
};

void write_ints(Writer& w, const std::vector<int>& v) {
  w.count(v.size());
  for (int x : v) {
    if (x < 0) throw InvalidArgument("negative count in model config");
    w.u32(static_cast<std::uint32_t>(x));
  }
}

Writer config_block(const ModelConfig& c) {
  Writer w;
  w.count(static_cast<std::size_t>(c.layer_count));
  write_ints(w, c.filter_sides);
  write_ints(w, c.atom_counts);
  write_ints(w, c.compressed_channels);
  w.count(c.context_offsets.size());
  for (const Offset& o : c.context_offsets) {
    w.i32(o.dx);
    w.i32(o.dy);
  }
  w.count(static_cast<std::size_t>(c.samples_per_layer));
  w.count(static_cast<std::size_t>(c.compressor_samples));
  w.count(static_cast<std::size_t>(c.ensemble.tree_count));
  w.f64(c.ensemble.xi);
  w.f64(c.ensemble.zeta);
  w.count(static_cast<std::size_t>(c.ensemble.max_depth));
  w.f64(c.ensemble.subsample_ratio);
  w.count(static_cast<std::size_t>(c.ensemble.min_samples_leaf));
  w.u64(c.ensemble.seed);
  w.u32(static_cast<std::uint32_t>(c.ensemble.mode));
  w.f64(c.sparse.lambda);
  w.count(static_cast<std::size_t>(c.sparse.max_inner_iters));
  w.f64(c.sparse.tol);
  w.f64(c.sparse.sparsity_ceiling);
  w.count(static_cast<std::size_t>(c.sparse.dict_epochs));
  w.count(static_cast<std::size_t>(c.sparse.patches_per_epoch));
  w.f64(c.sparse.step_size);
  w.u64(c.sparse.seed);
  w.f64(c.threshold);
  w.u32(static_cast<std::uint32_t>(c.color_mode));
  w.u32(static_cast<std::uint32_t>(c.reuse_mode));
  w.count(static_cast<std::size_t>(c.highpass_radius));
  w.u8(c.append_input ? 1 : 0);
  w.u64(c.seed);
  return w;
}

ModelConfig read_config(Reader r) {
  ModelConfig c;
  c.layer_count = r.small_int();
  c.filter_sides = r.ints();
  c.atom_counts = r.ints();
  c.compressed_channels = r.ints();
  const std::size_t offsets = r.u32();
  if (offsets > r.remaining() / 8) r.fail("offset count exceeds block size");
  c.context_offsets.clear();
  for (std::size_t i = 0; i < offsets; ++i) {
    const int dx = r.i32();
    const int dy = r.i32();
    c.context_offsets.push_back({dx, dy});
  }
  c.samples_per_layer = r.small_int();
  c.compressor_samples = r.small_int();
  c.ensemble.tree_count = r.small_int();
  c.ensemble.xi = r.f64();
  c.ensemble.zeta = r.f64();
  c.ensemble.max_depth = r.small_int();
  c.ensemble.subsample_ratio = r.f64();
  c.ensemble.min_samples_leaf = r.small_int();
  c.ensemble.seed = r.u64();
  const std::uint32_t vote = r.u32();
  if (vote > 1) r.fail("unknown vote mode");
  c.ensemble.mode = static_cast<VoteMode>(vote);
  c.sparse.lambda = r.f64();
  c.sparse.max_inner_iters = r.small_int();
  c.sparse.tol = r.f64();
  c.sparse.sparsity_ceiling = r.f64();
  c.sparse.dict_epochs = r.small_int();
  c.sparse.patches_per_epoch = r.small_int();
  c.sparse.step_size = r.f64();
  c.sparse.seed = r.u64();
  c.threshold = r.f64();
  const std::uint32_t color = r.u32();
  if (color > 1) r.fail("unknown colour mode");
  c.color_mode = static_cast<ColorMode>(color);
  const std::uint32_t reuse = r.u32();
  if (reuse > 2) r.fail("unknown reuse mode");
  c.reuse_mode = static_cast<ReuseMode>(reuse);
  c.highpass_radius = r.small_int();
  const std::uint8_t append = r.u8();
  if (append > 1) r.fail("invalid append_input flag");
  c.append_input = append == 1;
  c.seed = r.u64();
  r.finish();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    r.fail(e.what());
  }
  return c;
}

Writer dictionary_block(const Layer& layer) {
  Writer w;
  w.count(layer.dictionaries.size());
  for (const LocalDictionary& d : layer.dictionaries) {
    w.count(static_cast<std::size_t>(d.filter_side()));
    w.count(static_cast<std::size_t>(d.atom_count()));
    w.f64s(d.atoms());
  }
  return w;
}

std::vector<LocalDictionary> read_dictionaries(Reader r) {
  std::vector<LocalDictionary> out;
  const std::size_t n = r.u32();
  if (n > r.remaining()) r.fail("dictionary count exceeds block size");
  for (std::size_t i = 0; i < n; ++i) {
    const int side = r.small_int();
    const int count = r.small_int();
    auto atoms = r.f64s();
    try {
      out.emplace_back(side, count, std::move(atoms));
    } catch (const InvalidArgument& e) {
      r.fail(e.what());
    }
  }
  r.finish();
  return out;
}

Writer compressor_block(const Compressor& c) {
  Writer w;
  w.count(static_cast<std::size_t>(c.in_channels()));
  w.count(static_cast<std::size_t>(c.out_channels()));
  w.f64s(c.projection());
  w.f64s(c.mean());
  w.f64s(c.explained_variance());
  return w;
}

Compressor read_compressor(Reader r) {
  const int in = r.small_int();
  const int out = r.small_int();
  auto projection = r.f64s();
  auto mean = r.f64s();
  auto variance = r.f64s();
  r.finish();
  try {
    Compressor c(in, out, std::move(projection), std::move(mean));
    c.set_explained_variance(std::move(variance));
    return c;
  } catch (const InvalidArgument& e) {
    r.fail(e.what());
  }
}

Writer rescale_block(const Layer& layer) {
  Writer w;
  w.f64(layer.input_min);
  w.f64(layer.input_max);
  return w;
}

Writer ensemble_block(const TreeEnsemble& e) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(e.mode()));
  w.f64(e.base());
  w.count(e.feature_count());
  w.count(e.trees().size());
  for (std::size_t m = 0; m < e.trees().size(); ++m) {
    w.f64(e.weights()[m]);
    const auto& nodes = e.trees()[m].nodes();
    w.count(nodes.size());
    for (const TreeNode& n : nodes) {
      w.u8(n.is_leaf ? 1 : 0);
      if (n.is_leaf) {
        w.f64(n.response);
      } else {
        w.u32(n.feature);
        w.f64(n.threshold);
      }
    }
  }
  return w;
}

// Rebuilds child links from the preorder sequence.
std::int32_t link_preorder(std::vector<TreeNode>& nodes, std::size_t& next, Reader& r) {
  if (next >= nodes.size()) r.fail("tree node sequence is incomplete");
  const auto id = static_cast<std::int32_t>(next++);
  TreeNode& n = nodes[static_cast<std::size_t>(id)];
  if (!n.is_leaf) {
    const std::int32_t left = link_preorder(nodes, next, r);
    const std::int32_t right = link_preorder(nodes, next, r);
    nodes[static_cast<std::size_t>(id)].left = left;
    nodes[static_cast<std::size_t>(id)].right = right;
  }
  return id;
}

TreeEnsemble read_ensemble(Reader r) {
  const std::uint32_t mode = r.u32();
  if (mode > 1) r.fail("unknown vote mode");
  const double base = r.f64();
  const std::size_t features = r.u32();
  const std::size_t tree_count = r.u32();
  if (tree_count > r.remaining()) r.fail("tree count exceeds block size");
  std::vector<DecisionTree> trees;
  std::vector<double> weights;
  for (std::size_t m = 0; m < tree_count; ++m) {
    weights.push_back(r.f64());
    const std::size_t count = r.u32();
    if (count == 0 || count > r.remaining()) r.fail("invalid tree node count");
    std::vector<TreeNode> nodes(count);
    for (TreeNode& n : nodes) {
      const std::uint8_t flag = r.u8();
      if (flag > 1) r.fail("invalid leaf flag");
      n.is_leaf = flag == 1;
      if (n.is_leaf) {
        n.response = r.f64();
      } else {
        n.feature = r.u32();
        n.threshold = r.f64();
      }
    }
    std::size_t next = 0;
    link_preorder(nodes, next, r);
    if (next != nodes.size()) r.fail("tree has unreachable nodes");
    try {
      trees.emplace_back(std::move(nodes));
    } catch (const InvalidArgument& e) {
      r.fail(e.what());
    }
  }
  r.finish();
  try {
    return TreeEnsemble(std::move(trees), std::move(weights), static_cast<VoteMode>(mode), base,
                        features);
  } catch (const InvalidArgument& e) {
    r.fail(e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  model.validate();
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(model.format_version);
  w.count(model.layers.size());
  w.block("CONF", config_block(model.config));
  for (const Layer& layer : model.layers) {
    w.block("DICT", dictionary_block(layer));
    w.block("COMP", compressor_block(layer.compressor));
    w.block("RESC", rescale_block(layer));
    w.block("ENSB", ensemble_block(layer.ensemble));
  }
  return w.take();
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes.data(), bytes.size(), "header");
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  r.take(sizeof(kMagic));
  if (r.remaining() < 6) r.fail("truncated");
  Model model;
  model.format_version = r.u16();
  if (model.format_version != Model::kFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(model.format_version));
  }
  const std::size_t layers = r.u32();
  model.config = read_config(r.block("CONF", ""));
  if (layers != static_cast<std::size_t>(model.config.layer_count)) {
    r.fail("layer count disagrees with the config block");
  }
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string suffix = " (layer " + std::to_string(k + 1) + ")";
    Layer layer;
    layer.index = static_cast<int>(k) + 1;
    layer.dictionaries = read_dictionaries(r.block("DICT", "DICT" + suffix));
    layer.compressor = read_compressor(r.block("COMP", "COMP" + suffix));
    Reader resc = r.block("RESC", "RESC" + suffix);
    layer.input_min = resc.f64();
    layer.input_max = resc.f64();
    resc.finish();
    layer.ensemble = read_ensemble(r.block("ENSB", "ENSB" + suffix));
    model.layers.push_back(std::move(layer));
  }
  r.finish();
  try {
    model.validate();
  } catch (const InvalidState& e) {
    throw IntegrityError(std::string("model file is inconsistent: ") + e.what());
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open file for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize_model(bytes);
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace scd2te
