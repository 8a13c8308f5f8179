#include "mgmf/encoders.hpp"

#include <string>
#include <vector>

namespace mgmf {

AttnParams AttnParamRefs::bind(Tape& tape) const {
  return AttnParams{tape.param(*wq), tape.param(*bq), tape.param(*wk),
                    tape.param(*bk), tape.param(*wv), tape.param(*bv),
                    tape.param(*wo), tape.param(*bo)};
}

FeedForwardParams FfnParamRefs::bind(Tape& tape) const {
  return FeedForwardParams{tape.param(*w1), tape.param(*b1), tape.param(*w2),
                           tape.param(*b2)};
}

LayerNormParams LnParamRefs::bind(Tape& tape) const {
  return LayerNormParams{tape.param(*gain), tape.param(*bias)};
}

AttnParamRefs make_attn_params(ParamStore& ps, const std::string& prefix,
                               std::size_t d, std::uint64_t seed) {
  AttnParamRefs r;
  r.wq = &ps.create_fan(prefix + ".wq", {d, d}, seed);
  r.bq = &ps.create_const(prefix + ".bq", {d}, 0.0);
  r.wk = &ps.create_fan(prefix + ".wk", {d, d}, seed);
  r.bk = &ps.create_const(prefix + ".bk", {d}, 0.0);
  r.wv = &ps.create_fan(prefix + ".wv", {d, d}, seed);
  r.bv = &ps.create_const(prefix + ".bv", {d}, 0.0);
  r.wo = &ps.create_fan(prefix + ".wo", {d, d}, seed);
  r.bo = &ps.create_const(prefix + ".bo", {d}, 0.0);
  return r;
}

FfnParamRefs make_ffn_params(ParamStore& ps, const std::string& prefix,
                             std::size_t d, std::size_t hidden,
                             std::uint64_t seed) {
  FfnParamRefs r;
  r.w1 = &ps.create_fan(prefix + ".w1", {d, hidden}, seed);
  r.b1 = &ps.create_const(prefix + ".b1", {hidden}, 0.0);
  r.w2 = &ps.create_fan(prefix + ".w2", {hidden, d}, seed);
  r.b2 = &ps.create_const(prefix + ".b2", {d}, 0.0);
  return r;
}

LnParamRefs make_ln_params(ParamStore& ps, const std::string& prefix,
                           std::size_t d) {
  LnParamRefs r;
  r.gain = &ps.create_const(prefix + ".gain", {d}, 1.0);
  r.bias = &ps.create_const(prefix + ".bias", {d}, 0.0);
  return r;
}

BlockParamRefs make_block_params(ParamStore& ps, const std::string& prefix,
                                 std::size_t d, std::size_t hidden,
                                 std::uint64_t seed) {
  BlockParamRefs b;
  b.ln1 = make_ln_params(ps, prefix + ".ln1", d);
  b.attn = make_attn_params(ps, prefix + ".attn", d, seed);
  b.ln2 = make_ln_params(ps, prefix + ".ln2", d);
  b.ffn = make_ffn_params(ps, prefix + ".ffn", d, hidden, seed);
  return b;
}

Tensor encoder_block(Tape& tape, Tensor x, const BlockParamRefs& p,
                     std::size_t heads, double ln_eps,
                     const std::string& label) {
  Tensor n1 = layer_norm(x, p.ln1.bind(tape), ln_eps);
  auto [attended, maps] = multi_head_attention(n1, n1, p.attn.bind(tape), heads, label);
  (void)maps;
  Tensor x1 = add(x, attended);
  Tensor n2 = layer_norm(x1, p.ln2.bind(tape), ln_eps);
  return add(x1, feed_forward(n2, p.ffn.bind(tape), Activation::Gelu));
}

const char* text_role_name(TextRole role) {
  switch (role) {
    case TextRole::Text: return "text";
    case TextRole::Source: return "source";
    case TextRole::Target: return "target";
  }
  return "?";
}

namespace {

void check_encoder_config(const EncoderConfig& cfg) {
  if (cfg.vocab == 0) throw ConfigError("encoder vocab must be positive");
  if (cfg.width == 0 || cfg.heads == 0 || cfg.width % cfg.heads != 0)
    throw ConfigError("encoder width must be a positive multiple of heads");
  if (cfg.max_text == 0) throw ConfigError("encoder max_text must be positive");
  if (cfg.patch_side == 0 || cfg.image_side == 0 ||
      cfg.image_side % cfg.patch_side != 0)
    throw ConfigError("patch side must divide image side, got " +
                      std::to_string(cfg.patch_side) + " over " +
                      std::to_string(cfg.image_side));
  if (cfg.channels == 0) throw ConfigError("encoder channels must be positive");
}

}  // namespace

Encoders::Encoders(ParamStore& ps, const EncoderConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  check_encoder_config(cfg_);
  const std::size_t d = cfg_.width;
  tok_emb_ = &ps.create_uniform("enc.tok_emb", {cfg_.vocab, d}, 0.1, seed);
  role_pos_ = &ps.create_uniform("enc.role_pos", {3 * cfg_.max_text, d}, 0.1, seed);
  text_block_ = make_block_params(ps, "enc.text", d, cfg_.ff_hidden, seed);
  const std::size_t patch_dim =
      cfg_.patch_side * cfg_.patch_side * cfg_.channels;
  patch_proj_ = &ps.create_fan("enc.patch_proj", {patch_dim, d}, seed);
  patch_bias_ = &ps.create_const("enc.patch_bias", {d}, 0.0);
  class_tok_ = &ps.create_uniform("enc.class_tok", {1, d}, 0.1, seed);
  patch_pos_ = &ps.create_uniform("enc.patch_pos", {patches_per_region() + 1, d},
                                  0.1, seed);
  region_block_ = make_block_params(ps, "enc.region", d, cfg_.ff_hidden, seed);
}

std::size_t Encoders::patches_per_region() const {
  const std::size_t side = cfg_.image_side / cfg_.patch_side;
  return side * side;
}

Tensor Encoders::encode_text(Tape& tape, std::span<const int> tokens,
                             TextRole role, const std::string& who) const {
  const std::string ctx = who.empty() ? std::string("token sequence")
                                      : "sample " + who;
  if (tokens.empty())
    throw DataError(ctx + ": empty " + text_role_name(role) + " token list");
  if (tokens.size() > cfg_.max_text)
    throw DataError(ctx + ": " + text_role_name(role) + " length " +
                    std::to_string(tokens.size()) + " exceeds maximum " +
                    std::to_string(cfg_.max_text));
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab)
      throw DataError(ctx + ": token id " + std::to_string(t) +
                      " outside vocabulary of " + std::to_string(cfg_.vocab));

  Tensor emb = embed_rows(tape.param(*tok_emb_), tokens);
  const std::size_t offset = static_cast<std::size_t>(role) * cfg_.max_text;
  Tensor pos = slice_rows(tape.param(*role_pos_), offset, offset + tokens.size());
  Tensor x = add(emb, pos);
  return encoder_block(tape, x, text_block_, cfg_.heads, cfg_.ln_eps,
                       std::string(text_role_name(role)) + ".enc");
}

Tensor Encoders::patchify_region(Tape& tape, const ImageGrid& region) const {
  const std::size_t s = cfg_.image_side, p = cfg_.patch_side, c = cfg_.channels;
  if (region.height != s || region.width != s || region.channels != c)
    throw ShapeError("patchify expects a " + std::to_string(s) + "x" +
                     std::to_string(s) + "x" + std::to_string(c) +
                     " grid, got " + std::to_string(region.height) + "x" +
                     std::to_string(region.width) + "x" +
                     std::to_string(region.channels));
  const std::size_t per_side = s / p;
  const std::size_t m = per_side * per_side;
  const std::size_t patch_dim = p * p * c;
  std::vector<double> flat(m * patch_dim);
  for (std::size_t pr = 0; pr < per_side; ++pr)
    for (std::size_t pc = 0; pc < per_side; ++pc) {
      double* dst = flat.data() + (pr * per_side + pc) * patch_dim;
      for (std::size_t r = 0; r < p; ++r)
        for (std::size_t col = 0; col < p; ++col)
          for (std::size_t ch = 0; ch < c; ++ch)
            *dst++ = region.at(pr * p + r, pc * p + col, ch);
    }
  Tensor pixels = tape.constant({m, patch_dim}, flat);
  Tensor patches = add_rowwise(matmul(pixels, tape.param(*patch_proj_)),
                               tape.param(*patch_bias_));
  const Tensor parts[] = {tape.param(*class_tok_), patches};
  Tensor seq = concat_rows(parts);
  return add(seq, tape.param(*patch_pos_));
}

Tensor Encoders::encode_region(Tape& tape, Tensor patch_seq) const {
  Tensor out = encoder_block(tape, patch_seq, region_block_, cfg_.heads,
                             cfg_.ln_eps, "region.enc");
  return slice_rows(out, 0, 1);
}

ImageRepresentation Encoders::encode_image(Tape& tape, const MemeSample& sample,
                                           const std::filesystem::path& base_dir,
                                           bool include_regions) const {
  ImageGrid img = materialize_image(sample, base_dir);
  std::vector<Tensor> rows;
  const Box whole{0.0, 0.0, static_cast<double>(img.width),
                  static_cast<double>(img.height)};
  rows.push_back(encode_region(
      tape, patchify_region(tape, resample_box(img, whole, cfg_.image_side))));
  if (include_regions)
    for (const Box& box : sample.regions)
      rows.push_back(encode_region(
          tape, patchify_region(tape, resample_box(img, box, cfg_.image_side))));
  ImageRepresentation rep;
  rep.regions = rows.size() - 1;
  rep.sequence = rows.size() == 1 ? rows[0] : concat_rows(rows);
  return rep;
}

}  // namespace mgmf
