#include "ogm/model.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <random>

namespace ogm {

void ModelConfig::validate() const {
  if (descriptor_dim == 0) throw ConfigError("model.descriptor_dim must be positive");
  if (guidance_dim == 0) throw ConfigError("model.guidance_dim must be positive");
  if (num_blocks == 0) throw ConfigError("model.num_blocks must be >= 1");
  if (num_heads == 0 || descriptor_dim % num_heads != 0)
    throw ConfigError("model.num_heads must divide model.descriptor_dim");
  if (num_frequencies == 0 || num_frequencies > 30) throw ConfigError("model.num_frequencies must lie in [1, 30]");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("model.keep_ratio must lie in (0, 1]");
  if (sinkhorn.iterations == 0) throw ConfigError("model.sinkhorn_iterations must be >= 1");
  if (!(sinkhorn.temperature > 0.0)) throw ConfigError("model.temperature must be positive");
}

MatcherModel::MatcherModel(const ModelConfig& cfg) : config_(cfg) {
  config_.validate();
  const std::size_t c = cfg.descriptor_dim;
  std::mt19937_64 rng(cfg.init_seed);
  encoder_ = make_positional_encoder(store_, cfg.num_frequencies, cfg.encoder_hidden ? cfg.encoder_hidden : 2 * c, c,
                                     rng);
  PropagationConfig pc;
  pc.descriptor_dim = c;
  pc.num_blocks = cfg.num_blocks;
  pc.num_heads = cfg.num_heads;
  pc.out_hidden = cfg.out_hidden;
  pc.position_mode = cfg.position_mode;
  pc.entangled_baseline = cfg.entangled_baseline;
  stack_ = make_propagation_stack(store_, pc, rng);
  dustbin_ = store_.add("dustbin", Tensor::matrix(1, 1, {cfg.initial_dustbin}));
}

void MatcherModel::check_compatible(const FeatureSet& fs) const {
  if (fs.descriptor_dim != config_.descriptor_dim) {
    throw ConfigError("feature set \"" + fs.image_id + "\" has descriptor dim " + std::to_string(fs.descriptor_dim) +
                      ", checkpoint expects " + std::to_string(config_.descriptor_dim));
  }
  if (fs.guidance_dim != config_.guidance_dim) {
    throw ConfigError("feature set \"" + fs.image_id + "\" has guidance dim " + std::to_string(fs.guidance_dim) +
                      ", checkpoint expects " + std::to_string(config_.guidance_dim));
  }
}

ForwardResult MatcherModel::forward(const Binding& params, const FeatureSet& a, const FeatureSet& b,
                                    const ForwardOptions& opts) const {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("empty keypoint set");
  check_compatible(a);
  check_compatible(b);
  Tape& tape = params.tape();
  const double ratio = opts.keep_ratio.value_or(config_.keep_ratio);

  const Tensor g_a = normalize_channels(a.guidance_tensor());
  const Tensor g_b = normalize_channels(b.guidance_tensor());
  std::optional<InterMasks> inter;
  if (ratio < 1.0) inter = build_inter_masks(g_a, g_b, ratio);
  std::optional<GuidanceMask> intra_a, intra_b;
  if (config_.guidance_on_intra && ratio < 1.0) {
    intra_a = build_intra_mask(g_a, ratio);
    intra_b = build_intra_mask(g_b, ratio);
  }

  PropagationInputs in;
  in.d_a = tape.constant(a.descriptor_tensor());
  in.d_b = tape.constant(b.descriptor_tensor());
  in.p_a = encode_positions(params, encoder_, a.location_tensor(), a.height, a.width);
  in.p_b = encode_positions(params, encoder_, b.location_tensor(), b.height, b.width);
  if (inter) {
    in.mask_b_to_a = &inter->b_to_a.mask;
    in.mask_a_to_b = &inter->a_to_b.mask;
  }
  if (intra_a) {
    in.intra_a = &intra_a->mask;
    in.intra_b = &intra_b->mask;
  }
  const PropagationOutput out = propagate(params, stack_, in, opts.stats);
  const Var scores = similarity(out.d_a, out.d_b);
  const Var log_p = log_sinkhorn(scores, params[dustbin_], config_.sinkhorn);
  return {log_p, out.d_a, out.d_b};
}

AssignmentMatrix MatcherModel::assign(const FeatureSet& a, const FeatureSet& b, const ForwardOptions& opts) const {
  Tape tape;
  Binding params(tape, store_, false);
  const ForwardResult r = forward(params, a, b, opts);
  return to_assignment(r.log_assignment.value(), config_.sinkhorn.iterations);
}

MatchList MatcherModel::match(const FeatureSet& a, const FeatureSet& b, double min_confidence) const {
  return extract_matches(assign(a, b), min_confidence);
}

namespace {

constexpr char kCheckpointMagic[4] = {'O', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  std::uint64_t offset() const { return pos_; }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const MatcherModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  for (std::size_t v : {c.descriptor_dim, c.guidance_dim, c.num_blocks, c.num_heads, c.num_frequencies,
                        c.encoder_hidden, c.out_hidden})
    put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(c.position_mode));
  put_u32(out, c.entangled_baseline ? 1 : 0);
  put_u32(out, c.guidance_on_intra ? 1 : 0);
  put_f64(out, c.keep_ratio);
  put_u32(out, static_cast<std::uint32_t>(c.sinkhorn.iterations));
  put_f64(out, c.sinkhorn.temperature);
  put_f64(out, c.initial_dustbin);
  put_u64(out, c.init_seed);

  const ParameterStore& store = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (ParamId id = 0; id < store.size(); ++id) {
    const Tensor& t = store[id];
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.data()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

MatcherModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  r.need(4, "magic");
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin()))
    throw FormatError("bad magic: expected \"OGCK\"", 0);
  r.u32("magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);

  ModelConfig c;
  c.descriptor_dim = r.u32("descriptor_dim");
  c.guidance_dim = r.u32("guidance_dim");
  c.num_blocks = r.u32("num_blocks");
  c.num_heads = r.u32("num_heads");
  c.num_frequencies = r.u32("num_frequencies");
  c.encoder_hidden = r.u32("encoder_hidden");
  c.out_hidden = r.u32("out_hidden");
  const std::uint32_t mode = r.u32("position_mode");
  if (mode > static_cast<std::uint32_t>(PositionMode::kSelfOnly))
    throw FormatError("invalid position mode " + std::to_string(mode), r.offset() - 4);
  c.position_mode = static_cast<PositionMode>(mode);
  c.entangled_baseline = r.u32("entangled_baseline") != 0;
  c.guidance_on_intra = r.u32("guidance_on_intra") != 0;
  c.keep_ratio = r.f64("keep_ratio");
  c.sinkhorn.iterations = r.u32("sinkhorn_iterations");
  c.sinkhorn.temperature = r.f64("temperature");
  c.initial_dustbin = r.f64("initial_dustbin");
  c.init_seed = r.u64("init_seed");

  MatcherModel model(c);
  ParameterStore& store = model.parameters();
  const std::uint32_t count = r.u32("parameter count");
  if (count != store.size()) {
    throw FormatError("parameter count mismatch: file has " + std::to_string(count) + ", config implies " +
                          std::to_string(store.size()),
                      r.offset() - 4);
  }
  for (ParamId id = 0; id < store.size(); ++id) {
    const std::uint64_t at = r.offset();
    const std::uint32_t rows = r.u32("parameter shape"), cols = r.u32("parameter shape");
    if (rows != store[id].rows() || cols != store[id].cols())
      throw FormatError("shape mismatch for parameter " + store.name(id), at);
    std::vector<double> values(static_cast<std::size_t>(rows) * cols);
    for (double& v : values) v = r.f64("parameter values");
    store.set(id, Tensor::matrix(rows, cols, std::move(values)));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after parameters", r.offset());
  return model;
}

}  // namespace ogm
