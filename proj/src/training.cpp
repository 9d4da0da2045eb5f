#include "sed/training.hpp"

#include "sed/errors.hpp"
#include "sed/hashing.hpp"
#include "sed/nn/optim.hpp"

namespace sed::training {

using nn::Tape;

void TrainingCurve::add(long step, std::vector<double> values) {
  if (values.size() != columns.size()) throw ContractError("training curve: column count mismatch");
  steps.push_back(step);
  rows.push_back(std::move(values));
}

std::string TrainingCurve::to_csv() const {
  std::string out = "step";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += std::to_string(steps[i]);
    for (double v : rows[i]) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

namespace {

nn::AdamConfig adam_config(const TrainingConfig& tc) {
  nn::AdamConfig a;
  a.grad_clip = tc.grad_clip;
  return a;
}

std::vector<int> draw_indices(std::size_t n, int batch, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<int> idx(static_cast<std::size_t>(batch));
  for (int& i : idx) i = static_cast<int>(pick(rng));
  return idx;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

SavaeRun train_savae(const savae::SavaeConfig& cfg, const TrainingConfig& tc,
                     std::span<const SparseSample> data, std::uint64_t seed) {
  tc.validate("savae_training");
  if (data.empty()) throw DataError("train_savae: empty dataset");
  SavaeRun run{savae::Savae(cfg, seed), {}, {}, {}};
  run.curve.columns = {"lr", "total", "dim_nll", "value_mse", "kl"};
  auto& params = run.model.parameters();
  nn::Adam adam(params, adam_config(tc));
  diffusion::EmaState ema = diffusion::EmaState::track(params, tc.ema_decay, tc.ema_warmup);
  std::vector<SparseSample> batch;
  for (long step = 1; step <= tc.steps; ++step) {
    Rng rng = derive_rng(seed, 0x5A7AE, static_cast<std::uint64_t>(step));
    batch.clear();
    for (int i : draw_indices(data.size(), tc.batch_size, rng)) batch.push_back(data[static_cast<std::size_t>(i)]);
    const Matrix noise = gaussian(tc.batch_size, cfg.latent_dim, rng);
    params.zero_grad();
    Tape tape = Tape::recording(params);
    const auto g = run.model.loss_graph(tape, batch, &noise, nn::ForwardMode::train(cfg.dropout, rng));
    tape.backward(g.total);
    const double lr = tc.learning_rate_at(step);
    adam.step(params, lr);
    ema.update(params);
    run.last = {tape.scalar(g.dim_nll), tape.scalar(g.value_mse), tape.scalar(g.kl), tape.scalar(g.total)};
    if (step % tc.log_every == 0 || step == tc.steps) {
      run.curve.add(step, {lr, run.last.total, run.last.dim_nll, run.last.value_mse, run.last.kl});
    }
  }
  run.ema = std::move(ema.shadow);
  return run;
}

BackboneRun train_backbone(const diffusion::BackboneConfig& cfg, const TrainingConfig& tc,
                           const diffusion::NoiseSchedule& schedule, const Matrix& data,
                           double self_cond_prob, std::uint64_t seed) {
  tc.validate("diffusion_training");
  if (data.rows() == 0) throw DataError("train_backbone: empty dataset");
  if (data.cols() != cfg.data_dim) throw ContractError("train_backbone: data width != backbone data_dim");
  BackboneRun run{diffusion::Backbone(cfg, seed), {}, {}, 0.0};
  run.curve.columns = {"lr", "loss"};
  auto& live = run.model.parameters();
  nn::Adam adam(live, adam_config(tc));
  run.ema = diffusion::EmaState::track(live, tc.ema_decay, tc.ema_warmup);
  const double p = cfg.self_condition ? self_cond_prob : 0.0;
  for (long step = 1; step <= tc.steps; ++step) {
    Rng rng = derive_rng(seed, 0xD1FF, static_cast<std::uint64_t>(step));
    const std::vector<int> idx = draw_indices(static_cast<std::size_t>(data.rows()), tc.batch_size, rng);
    Matrix x0(tc.batch_size, data.cols());
    for (int r = 0; r < tc.batch_size; ++r) x0.row(r) = data.row(idx[static_cast<std::size_t>(r)]);
    const diffusion::LossDraws draws = diffusion::draw_loss_inputs(tc.batch_size, cfg.data_dim, schedule, rng, p);
    live.zero_grad();
    Tape tape = Tape::recording(live);
    const nn::Var loss = diffusion::diffusion_loss_graph(tape, run.model, schedule, x0, draws,
                                                         nn::ForwardMode::train(cfg.dropout, rng));
    tape.backward(loss);
    const double lr = tc.learning_rate_at(step);
    adam.step(live, lr);
    run.ema.update(live);
    run.last_loss = tape.scalar(loss);
    if (step % tc.log_every == 0 || step == tc.steps) run.curve.add(step, {lr, run.last_loss});
  }
  return run;
}

VaeRun train_dense_vae(const baselines::DenseVaeConfig& cfg, const TrainingConfig& tc, const Matrix& data,
                       std::uint64_t seed) {
  tc.validate("vae_training");
  if (data.rows() == 0) throw DataError("train_dense_vae: empty dataset");
  VaeRun run{baselines::DenseVae(cfg, seed), {}, {}};
  run.curve.columns = {"lr", "total", "reconstruction", "kl"};
  auto& params = run.model.parameters();
  nn::Adam adam(params, adam_config(tc));
  diffusion::EmaState ema = diffusion::EmaState::track(params, tc.ema_decay, tc.ema_warmup);
  for (long step = 1; step <= tc.steps; ++step) {
    Rng rng = derive_rng(seed, 0xDE5E, static_cast<std::uint64_t>(step));
    const std::vector<int> idx = draw_indices(static_cast<std::size_t>(data.rows()), tc.batch_size, rng);
    Matrix x(tc.batch_size, data.cols());
    for (int r = 0; r < tc.batch_size; ++r) x.row(r) = data.row(idx[static_cast<std::size_t>(r)]);
    const Matrix noise = gaussian(tc.batch_size, cfg.latent_dim, rng);
    params.zero_grad();
    Tape tape = Tape::recording(params);
    const auto g = run.model.loss_graph(tape, x, &noise);
    tape.backward(g.total);
    const double lr = tc.learning_rate_at(step);
    adam.step(params, lr);
    ema.update(params);
    if (step % tc.log_every == 0 || step == tc.steps) {
      run.curve.add(step, {lr, tape.scalar(g.total), tape.scalar(g.reconstruction), tape.scalar(g.kl)});
    }
  }
  run.ema = std::move(ema.shadow);
  return run;
}

Matrix encode_dataset(const savae::Savae& model, std::span<const SparseSample> data, int batch_size,
                      const std::uint64_t* sample_seed) {
  if (batch_size < 1) throw ContractError("encode_dataset: batch_size must be positive");
  const int latent = model.config().latent_dim;
  Matrix out(static_cast<Eigen::Index>(data.size()), latent);
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(data.size() - start, static_cast<std::size_t>(batch_size));
    const auto chunk = data.subspan(start, count);
    if (sample_seed == nullptr) {
      out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = model.encode_means(chunk);
    } else {
      Matrix noise(static_cast<Eigen::Index>(count), latent);
      for (std::size_t i = 0; i < count; ++i) {
        Rng rng = derive_rng(*sample_seed, start + i);
        std::normal_distribution<double> normal;
        for (int j = 0; j < latent; ++j) noise(static_cast<Eigen::Index>(i), j) = normal(rng);
      }
      const auto encoded = model.encode(chunk, &noise);
      for (std::size_t i = 0; i < count; ++i) {
        for (int j = 0; j < latent; ++j) {
          out(static_cast<Eigen::Index>(start + i), j) = encoded[i].latent.z[static_cast<std::size_t>(j)];
        }
      }
    }
  }
  return out;
}

}  // namespace sed::training
