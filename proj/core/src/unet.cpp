#include "mfsr/unet.hpp"

#include <stdexcept>
#include <string>

namespace mfsr {

using ad::Tensor;

namespace {

int mid_width(int c_out) { return std::max(c_out / 2, 4); }

void append_block_params(std::vector<NamedParam>& out, const std::string& prefix,
                         const ResidueBlockParams& p, bool use_norm) {
  out.push_back({prefix + "/c1/w", p.c1.w});
  out.push_back({prefix + "/c1/b", p.c1.b});
  if (use_norm) {
    out.push_back({prefix + "/n1/gamma", p.n1.gamma});
    out.push_back({prefix + "/n1/beta", p.n1.beta});
  }
  out.push_back({prefix + "/c2/w", p.c2.w});
  out.push_back({prefix + "/c2/b", p.c2.b});
  if (use_norm) {
    out.push_back({prefix + "/n2/gamma", p.n2.gamma});
    out.push_back({prefix + "/n2/beta", p.n2.beta});
  }
  out.push_back({prefix + "/c3/w", p.c3.w});
  out.push_back({prefix + "/c3/b", p.c3.b});
  if (use_norm) {
    out.push_back({prefix + "/n3/gamma", p.n3.gamma});
    out.push_back({prefix + "/n3/beta", p.n3.beta});
  }
  if (p.proj.w.defined()) {
    out.push_back({prefix + "/proj/w", p.proj.w});
    out.push_back({prefix + "/proj/b", p.proj.b});
  }
}

ResidueBlockParams clone_block(const ResidueBlockParams& p) {
  ResidueBlockParams c;
  c.c_in = p.c_in;
  c.c_mid = p.c_mid;
  c.c_out = p.c_out;
  c.c1 = {p.c1.w.clone(), p.c1.b.clone()};
  c.c2 = {p.c2.w.clone(), p.c2.b.clone()};
  c.c3 = {p.c3.w.clone(), p.c3.b.clone()};
  c.n1 = {p.n1.gamma.clone(), p.n1.beta.clone()};
  c.n2 = {p.n2.gamma.clone(), p.n2.beta.clone()};
  c.n3 = {p.n3.gamma.clone(), p.n3.beta.clone()};
  if (p.proj.w.defined()) c.proj = {p.proj.w.clone(), p.proj.b.clone()};
  return c;
}

}  // namespace

ResidueBlockParams make_residue_block(int c_in, int c_out, Rng& rng) {
  if (c_in < 1 || c_out < 1) {
    throw std::invalid_argument("make_residue_block: widths must be positive");
  }
  ResidueBlockParams p;
  p.c_in = c_in;
  p.c_mid = mid_width(c_out);
  p.c_out = c_out;
  p.c1 = make_conv(p.c_mid, c_in, 1, rng);
  p.n1 = make_norm(p.c_mid);
  p.c2 = make_conv(p.c_mid, p.c_mid, 3, rng);
  p.n2 = make_norm(p.c_mid);
  p.c3 = make_conv(c_out, p.c_mid, 1, rng);
  p.n3 = make_norm(c_out);
  if (c_in != c_out) p.proj = make_conv(c_out, c_in, 1, rng);
  return p;
}

Tensor residue_block(const Tensor& x, const ResidueBlockParams& p, const UNetConfig& cfg) {
  using namespace ad;
  if (x.extent(0) != p.c_in) {
    throw std::invalid_argument("residue_block: input channel mismatch");
  }
  auto maybe_norm = [&](const Tensor& h, const NormParam& n) {
    return cfg.use_norm ? norm_layer(h, n.gamma, n.beta, cfg.norm_eps) : h;
  };
  Tensor h = unary(maybe_norm(conv3d(x, p.c1.w, p.c1.b), p.n1), Unary::Relu);
  h = unary(maybe_norm(conv3d(h, p.c2.w, p.c2.b), p.n2), Unary::Relu);
  h = maybe_norm(conv3d(h, p.c3.w, p.c3.b), p.n3);
  Tensor skip = p.proj.w.defined() ? conv3d(x, p.proj.w, p.proj.b) : x;
  return unary(add(h, skip), Unary::Relu);
}

ContextGenerator::ContextGenerator(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.depth < 1) throw std::invalid_argument("ContextGenerator: depth must be >= 1");
  if (cfg.in_channels < 1 || cfg.n_c < 1 || cfg.base_width < 1) {
    throw std::invalid_argument("ContextGenerator: channel widths must be positive");
  }
  Rng rng(seed);
  auto width = [&](int level) { return cfg.base_width << level; };

  int c = cfg.in_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    down_.push_back(make_residue_block(c, width(l), rng));
    c = width(l);
  }
  bottom_ = make_residue_block(width(cfg.depth - 1), width(cfg.depth), rng);
  up_.resize(static_cast<std::size_t>(cfg.depth));
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const int from_below = width(l + 1);
    up_[static_cast<std::size_t>(l)] =
        make_residue_block(from_below + width(l), width(l), rng);
  }
  head_ = make_conv(cfg.n_c, width(0), 1, rng);
}

Tensor ContextGenerator::encode_tensor(const Tensor& x) const {
  using namespace ad;
  if (x.rank() != 4 || x.extent(0) != cfg_.in_channels) {
    throw std::invalid_argument("encode: input must be [in_channels, T, Z, X]");
  }
  const int div = 1 << cfg_.depth;
  for (int a = 1; a <= 3; ++a) {
    if (x.extent(a) % div != 0) {
      throw std::invalid_argument("encode: window extents must be divisible by 2^depth");
    }
  }

  std::vector<Tensor> skips;
  Tensor h = x;
  for (int l = 0; l < cfg_.depth; ++l) {
    h = residue_block(h, down_[static_cast<std::size_t>(l)], cfg_);
    skips.push_back(h);
    h = maxpool3d(h);
  }
  h = residue_block(h, bottom_, cfg_);
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    h = upsample_nearest3d(h, 2);
    h = concat_channels(h, skips[static_cast<std::size_t>(l)]);
    h = residue_block(h, up_[static_cast<std::size_t>(l)], cfg_);
  }
  return conv3d(h, head_.w, head_.b);
}

LatentContextGrid ContextGenerator::encode(const Field4& lr) const {
  if (lr.n_channels() != cfg_.in_channels) {
    throw std::invalid_argument("encode: field channel count does not match config");
  }
  LatentContextGrid grid;
  grid.data = encode_tensor(lr.data);
  grid.spacing = lr.spacing;
  grid.origin = lr.origin;
  return grid;
}

std::vector<NamedParam> ContextGenerator::parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < down_.size(); ++l) {
    append_block_params(out, "unet/enc" + std::to_string(l), down_[l], cfg_.use_norm);
  }
  append_block_params(out, "unet/bottom", bottom_, cfg_.use_norm);
  for (std::size_t l = 0; l < up_.size(); ++l) {
    append_block_params(out, "unet/dec" + std::to_string(l), up_[l], cfg_.use_norm);
  }
  out.push_back({"unet/head/w", head_.w});
  out.push_back({"unet/head/b", head_.b});
  return out;
}

ContextGenerator ContextGenerator::clone() const {
  ContextGenerator c;
  c.cfg_ = cfg_;
  for (const auto& b : down_) c.down_.push_back(clone_block(b));
  c.bottom_ = clone_block(bottom_);
  for (const auto& b : up_) c.up_.push_back(clone_block(b));
  c.head_ = {head_.w.clone(), head_.b.clone()};
  return c;
}

int ContextGenerator::receptive_field_radius() const {
  // One 3x3x3 conv per block contributes radius 1 at its level; pooling then
  // upsampling turns radius r at the deeper level into 2r + 1 here. Bottom
  // block: r = 1; per level above: r = 1 + (2r + 1) + 1.
  int r = 1;
  for (int l = 0; l < cfg_.depth; ++l) r = 2 * r + 3;
  return r + 1;  // slack for pool/upsample block alignment
}

}  // namespace mfsr
