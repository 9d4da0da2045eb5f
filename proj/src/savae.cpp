#include "sed/savae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sed/errors.hpp"
#include "sed/json_util.hpp"

namespace sed::savae {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void SavaeConfig::validate() const {
  if (ambient_dim <= 0) throw ConfigError("savae.ambient_dim must be positive");
  encoding().validate();
  if (d_ff <= 0) throw ConfigError("savae.d_ff must be positive");
  if (num_heads <= 0 || d_model % num_heads != 0) {
    throw ConfigError("savae.num_heads must divide d_model");
  }
  if (num_layers < 0) throw ConfigError("savae.num_layers must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("savae.dropout must lie in [0, 1)");
  if (beta < 0.0) throw ConfigError("savae.beta must be non-negative");
  if (latent_dim < 1) throw ConfigError("savae.latent_dim must be at least 1");
  if (max_sequence_length < 1) throw ConfigError("savae.max_sequence_length must be at least 1");
  if (!(value_variance > 0.0)) throw ConfigError("savae.value_variance must be positive");
}

nlohmann::json SavaeConfig::to_json() const {
  return {{"ambient_dim", ambient_dim},
          {"d_model", d_model},
          {"d_ff", d_ff},
          {"num_heads", num_heads},
          {"num_layers", num_layers},
          {"dropout", dropout},
          {"beta", beta},
          {"latent_dim", latent_dim},
          {"max_sequence_length", max_sequence_length},
          {"dimension_base", dimension_base},
          {"value_variance", value_variance}};
}

SavaeConfig SavaeConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"ambient_dim", "d_model", "d_ff", "num_heads", "num_layers", "dropout",
                      "beta", "latent_dim", "max_sequence_length", "dimension_base",
                      "value_variance"},
                     "savae");
  SavaeConfig c;
  read_optional(j, "ambient_dim", c.ambient_dim, "savae");
  read_optional(j, "d_model", c.d_model, "savae");
  read_optional(j, "d_ff", c.d_ff, "savae");
  read_optional(j, "num_heads", c.num_heads, "savae");
  read_optional(j, "num_layers", c.num_layers, "savae");
  read_optional(j, "dropout", c.dropout, "savae");
  read_optional(j, "beta", c.beta, "savae");
  read_optional(j, "latent_dim", c.latent_dim, "savae");
  read_optional(j, "max_sequence_length", c.max_sequence_length, "savae");
  read_optional(j, "dimension_base", c.dimension_base, "savae");
  read_optional(j, "value_variance", c.value_variance, "savae");
  return c;
}

// ---------------------------------------------------------------------------

bool GeneratedSample::valid_order() const {
  for (std::size_t i = 1; i < dims.size(); ++i) {
    if (dims[i] <= dims[i - 1]) return false;
  }
  return true;
}

DenseSample GeneratedSample::to_dense() const {
  std::vector<double> data(static_cast<std::size_t>(ambient_dim), 0.0);
  for (std::size_t i = 0; i < dims.size(); ++i) data[static_cast<std::size_t>(dims[i])] = values[i];
  return DenseSample(std::move(data));
}

SparseSample GeneratedSample::to_sparse() const { return nze_extract(to_dense()); }

double kl_gaussian(const PosteriorParams& posterior) {
  if (posterior.mu.size() != posterior.log_var.size()) {
    throw ContractError("kl_gaussian: mu and log_var differ in length");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < posterior.mu.size(); ++j) {
    const double lv = posterior.log_var[j];
    kl += 0.5 * (posterior.mu[j] * posterior.mu[j] + std::exp(lv) - 1.0 - lv);
  }
  return kl;
}

LossBreakdown savae_loss(std::span<const DecoderStepOutput> outputs, const SparseSample& target,
                         const PosteriorParams& posterior, const SavaeConfig& cfg) {
  const int l = target.length();
  if (static_cast<int>(outputs.size()) != l + 1) {
    throw ContractError("savae_loss: expected " + std::to_string(l + 1) + " step outputs, got " +
                        std::to_string(outputs.size()));
  }
  LossBreakdown out;
  for (int i = 0; i <= l; ++i) {
    const auto& logits = outputs[static_cast<std::size_t>(i)].dim_logits;
    if (static_cast<int>(logits.size()) != cfg.ambient_dim + 1) {
      throw ContractError("savae_loss: logits must have s + 1 entries");
    }
    const int t = i < l ? target.dims()[static_cast<std::size_t>(i)] : cfg.eos_token();
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    out.dim_nll += mx + std::log(z) - logits[static_cast<std::size_t>(t)];
    if (i < l) {
      const double diff = target.values()[static_cast<std::size_t>(i)] -
                          outputs[static_cast<std::size_t>(i)].value_mean;
      out.value_mse += diff * diff / cfg.value_variance;
    }
  }
  out.kl = kl_gaussian(posterior);
  out.total = out.dim_nll + out.value_mse + cfg.beta * out.kl;
  return out;
}

// ---------------------------------------------------------------------------

Savae::Savae(SavaeConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = derive_rng(init_seed, 0x5A7AE);
  const int d = cfg_.d_model;
  value_embed_ = nn::Linear::create(params_, "value_embed", 1, d, rng);
  encoder_start_ = params_.add("encoder.start", nn::glorot_uniform(1, d, rng));
  for (int i = 0; i < cfg_.num_layers; ++i) {
    encoder_.push_back(nn::TransformerBlock::create(params_, "encoder.block" + std::to_string(i), d,
                                                    cfg_.d_ff, cfg_.num_heads, rng));
  }
  encoder_norm_ = nn::LayerNorm::create(params_, "encoder.norm", d);
  mu_head_ = nn::Linear::create(params_, "encoder.mu", d, cfg_.latent_dim, rng);
  log_var_head_ = nn::Linear::create(params_, "encoder.log_var", d, cfg_.latent_dim, rng);
  latent_to_start_ = nn::Linear::create(params_, "decoder.start", cfg_.latent_dim, d, rng);
  for (int i = 0; i < cfg_.num_layers; ++i) {
    decoder_.push_back(nn::TransformerBlock::create(params_, "decoder.block" + std::to_string(i), d,
                                                    cfg_.d_ff, cfg_.num_heads, rng));
  }
  decoder_norm_ = nn::LayerNorm::create(params_, "decoder.norm", d);
  dim_head_ = nn::Linear::create(params_, "decoder.dim_head", d, cfg_.ambient_dim + 1, rng);
  value_head_ = nn::Linear::create(params_, "decoder.value_head", d, 1, rng);
}

Var Savae::embed_tokens(Tape& tape, std::span<const int> dims, std::span<const double> values) const {
  const auto n = static_cast<Eigen::Index>(dims.size());
  Matrix v(n, 1);
  Matrix de(n, cfg_.d_model);
  const EncodingConfig enc = cfg_.encoding();
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i, 0) = values[static_cast<std::size_t>(i)];
    dimension_encoding_into(dims[static_cast<std::size_t>(i)], enc,
                            std::span<double>(de.row(i).data(), static_cast<std::size_t>(cfg_.d_model)));
  }
  return tape.add(value_embed_(tape, tape.constant(std::move(v))), tape.constant(std::move(de)));
}

Savae::EncoderGraph Savae::encode_graph(Tape& tape, std::span<const SparseSample> batch,
                                        const Matrix* noise, const nn::ForwardMode& mode) const {
  std::vector<std::vector<int>> dims;
  std::vector<std::vector<double>> values;
  for (const auto& s : batch) {
    if (s.ambient_dim() != cfg_.ambient_dim) {
      throw ContractError("encode: sample ambient_dim " + std::to_string(s.ambient_dim()) +
                          " does not match model " + std::to_string(cfg_.ambient_dim));
    }
    dims.push_back(s.dims());
    values.push_back(s.values());
  }
  return encode_sequences_graph(tape, dims, values, noise, mode);
}

Savae::EncoderGraph Savae::encode_sequences_graph(Tape& tape, std::span<const std::vector<int>> batch_dims,
                                                  std::span<const std::vector<double>> batch_values,
                                                  const Matrix* noise, const nn::ForwardMode& mode) const {
  if (batch_dims.empty()) throw ContractError("encode: empty batch");
  if (batch_dims.size() != batch_values.size()) throw ContractError("encode: dims/values batch mismatch");
  std::vector<int> dims;
  std::vector<double> values;
  std::vector<int> lengths;
  for (std::size_t b = 0; b < batch_dims.size(); ++b) {
    const auto& d = batch_dims[b];
    if (d.size() != batch_values[b].size()) throw ContractError("encode: dims/values length mismatch");
    if (static_cast<int>(d.size()) > cfg_.max_sequence_length) {
      throw CapacityError("encode: sample has " + std::to_string(d.size()) +
                          " non-zeros, exceeding max_sequence_length " +
                          std::to_string(cfg_.max_sequence_length));
    }
    for (int dim : d) {
      if (dim < 0 || dim >= cfg_.ambient_dim) throw ContractError("encode: dimension out of range");
    }
    dims.insert(dims.end(), d.begin(), d.end());
    values.insert(values.end(), batch_values[b].begin(), batch_values[b].end());
    lengths.push_back(static_cast<int>(d.size()));
  }
  const int n_tokens = static_cast<int>(dims.size());
  Var sources = tape.concat_rows(embed_tokens(tape, dims, values), tape.param(encoder_start_));

  // Empty samples are represented by the learned start token alone.
  std::vector<int> order;
  std::vector<int> seg_lengths;
  int offset = 0;
  for (int len : lengths) {
    if (len == 0) {
      order.push_back(n_tokens);
      seg_lengths.push_back(1);
    } else {
      for (int i = 0; i < len; ++i) order.push_back(offset + i);
      seg_lengths.push_back(len);
    }
    offset += len;
  }
  const nn::Segments segments = nn::Segments::from_lengths(seg_lengths);
  Var h = tape.gather_rows(sources, std::move(order));
  h = mode.apply_dropout(tape, h);
  for (const auto& block : encoder_) h = block(tape, h, segments, /*causal=*/false, mode);
  h = encoder_norm_(tape, h);

  EncoderGraph g;
  g.pooled = tape.segment_mean(h, segments);
  g.mu = mu_head_(tape, g.pooled);
  g.log_var = log_var_head_(tape, g.pooled);
  if (noise != nullptr) {
    if (noise->rows() != static_cast<Eigen::Index>(lengths.size()) || noise->cols() != cfg_.latent_dim) {
      throw ContractError("encode: noise must be batch x latent_dim");
    }
    Var std_dev = tape.exp(tape.scale(g.log_var, 0.5));
    g.z = tape.add(g.mu, tape.mul(std_dev, tape.constant(*noise)));
  } else {
    g.z = g.mu;
  }
  return g;
}

Savae::DecoderGraph Savae::decode_graph(Tape& tape, Var z, std::span<const std::vector<int>> dims,
                                        std::span<const std::vector<double>> values,
                                        const nn::ForwardMode& mode, bool last_row_only) const {
  const auto batch = static_cast<int>(dims.size());
  if (values.size() != dims.size()) throw ContractError("decode: dims/values batch mismatch");
  if (tape.value(z).rows() != batch || tape.value(z).cols() != cfg_.latent_dim) {
    throw ContractError("decode: z must be batch x latent_dim");
  }
  std::vector<int> flat_dims;
  std::vector<double> flat_values;
  std::vector<int> lengths;
  for (int b = 0; b < batch; ++b) {
    const auto& d = dims[static_cast<std::size_t>(b)];
    const auto& v = values[static_cast<std::size_t>(b)];
    if (d.size() != v.size()) throw ContractError("decode: dims/values length mismatch");
    if (static_cast<int>(d.size()) + 1 > cfg_.max_sequence_length + 1) {
      throw CapacityError("decode: sequence exceeds max_sequence_length");
    }
    for (int dim : d) {
      if (dim < 0 || dim >= cfg_.ambient_dim) throw ContractError("decode: dimension out of range");
    }
    flat_dims.insert(flat_dims.end(), d.begin(), d.end());
    flat_values.insert(flat_values.end(), v.begin(), v.end());
    lengths.push_back(static_cast<int>(d.size()) + 1);
  }
  Var start = latent_to_start_(tape, z);
  Var sources = tape.concat_rows(start, embed_tokens(tape, flat_dims, flat_values));
  std::vector<int> order;
  order.reserve(flat_dims.size() + static_cast<std::size_t>(batch));
  int offset = batch;
  for (int b = 0; b < batch; ++b) {
    order.push_back(b);
    for (int i = 0; i + 1 < lengths[static_cast<std::size_t>(b)]; ++i) order.push_back(offset + i);
    offset += lengths[static_cast<std::size_t>(b)] - 1;
  }
  DecoderGraph g;
  g.segments = nn::Segments::from_lengths(lengths);
  Var h = tape.gather_rows(sources, std::move(order));
  h = mode.apply_dropout(tape, h);
  for (const auto& block : decoder_) h = block(tape, h, g.segments, /*causal=*/true, mode);
  if (last_row_only) {
    std::vector<int> last;
    for (int b = 0; b < batch; ++b) last.push_back(g.segments.begin(b) + g.segments.length(b) - 1);
    h = tape.gather_rows(h, std::move(last));
  }
  h = decoder_norm_(tape, h);
  g.logits = dim_head_(tape, h);
  g.value_means = value_head_(tape, h);
  return g;
}

Savae::LossGraph Savae::loss_graph(Tape& tape, std::span<const SparseSample> batch,
                                   const Matrix* noise, const nn::ForwardMode& mode) const {
  EncoderGraph enc = encode_graph(tape, batch, noise, mode);
  std::vector<std::vector<int>> dims;
  std::vector<std::vector<double>> values;
  std::vector<int> targets;
  std::vector<int> value_rows;
  std::vector<double> value_targets;
  int row = 0;
  for (const auto& s : batch) {
    dims.push_back(s.dims());
    values.push_back(s.values());
    for (int i = 0; i < s.length(); ++i) {
      targets.push_back(s.dims()[static_cast<std::size_t>(i)]);
      value_rows.push_back(row + i);
      value_targets.push_back(s.values()[static_cast<std::size_t>(i)]);
    }
    targets.push_back(cfg_.eos_token());
    row += s.length() + 1;
  }
  DecoderGraph dec = decode_graph(tape, enc.z, dims, values, mode);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  LossGraph g;
  g.dim_nll = tape.scale(tape.softmax_cross_entropy(dec.logits, std::move(targets)), inv_batch);
  Matrix vt(static_cast<Eigen::Index>(value_targets.size()), 1);
  for (std::size_t i = 0; i < value_targets.size(); ++i) vt(static_cast<Eigen::Index>(i), 0) = value_targets[i];
  Var predicted = tape.gather_rows(dec.value_means, std::move(value_rows));
  g.value_mse = tape.scale(tape.squared_error(predicted, tape.constant(std::move(vt))),
                           inv_batch / cfg_.value_variance);
  // KL = 1/2 sum(mu^2 + exp(lv) - 1 - lv)
  Var kl_terms = tape.sub(tape.add(tape.mul(enc.mu, enc.mu), tape.exp(enc.log_var)), enc.log_var);
  g.kl = tape.scale(tape.add_scalar(tape.sum(kl_terms),
                                    -static_cast<double>(batch.size()) * cfg_.latent_dim),
                    0.5 * inv_batch);
  g.total = tape.add(tape.add(g.dim_nll, g.value_mse), tape.scale(g.kl, cfg_.beta));
  return g;
}

// ---------------------------------------------------------------------------

std::vector<EncodedSample> Savae::encode(std::span<const SparseSample> batch, const Matrix* noise) const {
  Tape tape = Tape::inference(params_);
  EncoderGraph g = encode_graph(tape, batch, noise, nn::ForwardMode::eval());
  const Matrix& mu = tape.value(g.mu);
  const Matrix& lv = tape.value(g.log_var);
  const Matrix& z = tape.value(g.z);
  std::vector<EncodedSample> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto r = static_cast<Eigen::Index>(b);
    out[b].posterior.mu.assign(mu.row(r).data(), mu.row(r).data() + mu.cols());
    out[b].posterior.log_var.assign(lv.row(r).data(), lv.row(r).data() + lv.cols());
    out[b].latent.z.assign(z.row(r).data(), z.row(r).data() + z.cols());
  }
  return out;
}

Matrix Savae::encode_means(std::span<const SparseSample> batch) const {
  Tape tape = Tape::inference(params_);
  EncoderGraph g = encode_graph(tape, batch, nullptr, nn::ForwardMode::eval());
  return tape.value(g.mu);
}

std::vector<DecoderStepOutput> Savae::decode_teacher_forced(const LatentState& z,
                                                            const SparseSample& target) const {
  if (static_cast<int>(z.z.size()) != cfg_.latent_dim) throw ContractError("decode: bad latent size");
  for (double v : z.z) {
    if (!std::isfinite(v)) throw ContractError("decode: latent is not finite");
  }
  if (target.ambient_dim() != cfg_.ambient_dim) throw ContractError("decode: ambient_dim mismatch");
  Tape tape = Tape::inference(params_);
  Matrix zm(1, cfg_.latent_dim);
  for (int j = 0; j < cfg_.latent_dim; ++j) zm(0, j) = z.z[static_cast<std::size_t>(j)];
  const std::vector<std::vector<int>> dims{target.dims()};
  const std::vector<std::vector<double>> values{target.values()};
  DecoderGraph g = decode_graph(tape, tape.constant(std::move(zm)), dims, values, nn::ForwardMode::eval());
  const Matrix& logits = tape.value(g.logits);
  const Matrix& means = tape.value(g.value_means);
  std::vector<DecoderStepOutput> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto& step = out[static_cast<std::size_t>(i)];
    step.dim_logits.assign(logits.row(i).data(), logits.row(i).data() + logits.cols());
    step.value_mean = means(i, 0);
  }
  return out;
}

std::vector<GeneratedSample> Savae::decode_greedy_batch(const Matrix& latents, int max_len,
                                                        bool constrained) const {
  if (latents.cols() != cfg_.latent_dim) throw ContractError("decode_greedy: bad latent width");
  if (max_len < 0 || max_len > std::min(cfg_.ambient_dim, cfg_.max_sequence_length)) {
    throw ContractError("decode_greedy: max_len must lie in [0, min(s, max_sequence_length)]");
  }
  const auto n = static_cast<int>(latents.rows());
  std::vector<GeneratedSample> out(static_cast<std::size_t>(n));
  for (auto& g : out) g.ambient_dim = cfg_.ambient_dim;
  std::vector<int> active(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = i;

  const int eos = cfg_.eos_token();
  for (int step = 0; !active.empty(); ++step) {
    if (step >= max_len) {
      for (int i : active) out[static_cast<std::size_t>(i)].hit_max_len = true;
      break;
    }
    Tape tape = Tape::inference(params_);
    Matrix z(static_cast<Eigen::Index>(active.size()), cfg_.latent_dim);
    std::vector<std::vector<int>> dims;
    std::vector<std::vector<double>> values;
    for (std::size_t a = 0; a < active.size(); ++a) {
      z.row(static_cast<Eigen::Index>(a)) = latents.row(active[a]);
      dims.push_back(out[static_cast<std::size_t>(active[a])].dims);
      values.push_back(out[static_cast<std::size_t>(active[a])].values);
    }
    DecoderGraph g = decode_graph(tape, tape.constant(std::move(z)), dims, values,
                                  nn::ForwardMode::eval(), /*last_row_only=*/true);
    const Matrix& logits = tape.value(g.logits);
    const Matrix& means = tape.value(g.value_means);
    std::vector<int> still_active;
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& sample = out[static_cast<std::size_t>(active[a])];
      const auto r = static_cast<Eigen::Index>(a);
      int best = eos;
      double best_logit = logits(r, eos);
      const int lowest = constrained && !sample.dims.empty() ? sample.dims.back() + 1 : 0;
      for (int d = lowest; d < cfg_.ambient_dim; ++d) {
        if (logits(r, d) > best_logit || (logits(r, d) == best_logit && d < best)) {
          best = d;
          best_logit = logits(r, d);
        }
      }
      if (best == eos) continue;
      sample.dims.push_back(best);
      sample.values.push_back(means(r, 0));
      still_active.push_back(active[a]);
    }
    active = std::move(still_active);
  }
  return out;
}

GeneratedSample Savae::decode_greedy(const LatentState& z, int max_len, bool constrained) const {
  Matrix zm(1, cfg_.latent_dim);
  if (static_cast<int>(z.z.size()) != cfg_.latent_dim) throw ContractError("decode_greedy: bad latent size");
  for (int j = 0; j < cfg_.latent_dim; ++j) zm(0, j) = z.z[static_cast<std::size_t>(j)];
  return decode_greedy_batch(zm, max_len, constrained).front();
}

// ---------------------------------------------------------------------------

Checkpoint Savae::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.model_kind = "savae";
  ckpt.config = cfg_.to_json();
  ckpt.put_parameters(params_, "params/");
  return ckpt;
}

Savae Savae::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  if (ckpt.model_kind != "savae") {
    throw CompatibilityError("expected a savae checkpoint, got '" + ckpt.model_kind + "'");
  }
  Savae model(SavaeConfig::from_json(ckpt.config), 0);
  ckpt.get_parameters(model.params_, prefix);
  return model;
}

}  // namespace sed::savae
