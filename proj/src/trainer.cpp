#include "occattn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "occattn/error.hpp"

namespace occattn {

std::string to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(const std::string& text) {
  if (text == "constant") return LrSchedule::constant;
  if (text == "cosine") return LrSchedule::cosine;
  throw ConfigurationError("unknown learning rate schedule '" + text + "' (expected constant|cosine)");
}

double TrainConfig::learning_rate_at(std::size_t step) const {
  if (schedule == LrSchedule::constant) return learning_rate;
  const double progress = double(step - 1) / double(steps);
  return 0.5 * learning_rate * (1.0 + std::cos(std::acos(-1.0) * progress));
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0) || !(epsilon > 0.0))
    throw ConfigurationError("learning rate and weight decay must be non-negative, epsilon positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigurationError("Adam betas must lie in [0, 1)");
  if (steps == 0 || val_interval == 0 || batch_size == 0 || points_per_object == 0 || val_points == 0)
    throw ConfigurationError("steps, val interval, batch size, and point counts must be positive");
  if (val_interval > steps) throw ConfigurationError("validation interval exceeds total steps");
}

void adam_step(const std::vector<Var*>& params, AdamState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const Var* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("Adam state does not match the parameter list");
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var& p = *params[i];
    if (state.m[i].shape() != p.shape()) throw ContractError("Adam moment shape mismatch");
    Eigen::VectorXd& theta = p.mutable_value().vector();
    const Eigen::VectorXd g = p.grad().vector() + config.weight_decay * theta;
    Eigen::VectorXd& m = state.m[i].vector();
    Eigen::VectorXd& v = state.v[i].vector();
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    theta.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
  }
}

Var bce_loss(const Var& logits, const Tensor& labels) { return ops::bce_with_logits(logits, labels); }

TrainingData load_training_data(const DatasetManifest& manifest, const std::string& category) {
  auto load = [&](Split split) {
    std::vector<TrainingObject> out;
    for (const ObjectEntry* e : manifest.select(split, category)) {
      TrainingObject o;
      o.id = e->id;
      o.category = e->category;
      for (const auto& path : e->images) o.images.push_back(read_image(manifest.resolve(path)));
      o.samples = read_samples(manifest.resolve(e->samples));
      if (o.images.empty() || o.samples.size() == 0) throw ConfigurationError("object '" + o.id + "' has no images or samples");
      out.push_back(std::move(o));
    }
    return out;
  };
  return {load(Split::train), load(Split::val)};
}

namespace {

struct Batch {
  Tensor images, points, labels;
};

Batch assemble(const std::vector<const TrainingObject*>& objects, const std::vector<std::size_t>& views,
               const std::vector<std::vector<std::size_t>>& indices) {
  const Shape& image_shape = objects.front()->images.front().shape();
  const std::size_t b = objects.size(), k = indices.front().size(), pixels = shape_size(image_shape);
  Batch batch{Tensor::uninitialized({b, image_shape[0], image_shape[1], image_shape[2]}),
              Tensor::uninitialized({b, k, 3}), Tensor::uninitialized({b, k})};
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor& image = objects[i]->images.at(views[i]);
    if (image.shape() != image_shape) throw DimensionError("training images differ in shape");
    std::copy(image.data(), image.data() + pixels, batch.images.data() + i * pixels);
    const OccupancySamples& s = objects[i]->samples;
    for (std::size_t j = 0; j < k; ++j) {
      const auto row = static_cast<Eigen::Index>(indices[i][j]);
      for (std::size_t a = 0; a < 3; ++a) batch.points[(i * k + j) * 3 + a] = s.points(row, static_cast<Eigen::Index>(a));
      batch.labels[i * k + j] = s.labels[row];
    }
  }
  return batch;
}

// Fixed evaluation points: the tail of each pool, so training batches drawn from the
// head never see them when validation falls back to training objects.
std::vector<std::size_t> validation_indices(const OccupancySamples& s, std::size_t count) {
  const std::size_t n = std::min(count, s.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), s.size() - n);
  return idx;
}

}  // namespace

double validation_loss(const OccupancyModel& model, const std::vector<TrainingObject>& objects,
                       const TrainConfig& config) {
  if (objects.empty()) throw ConfigurationError("validation needs at least one object");
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < objects.size(); begin += config.batch_size) {
    const std::size_t end = std::min(objects.size(), begin + config.batch_size);
    std::vector<const TrainingObject*> chunk;
    std::vector<std::size_t> views;
    std::vector<std::vector<std::size_t>> indices;
    for (std::size_t i = begin; i < end; ++i) {
      chunk.push_back(&objects[i]);
      views.push_back(0);
      indices.push_back(validation_indices(objects[i].samples, config.val_points));
    }
    const std::size_t k = indices.front().size();
    for (const auto& idx : indices)
      if (idx.size() != k) throw ConfigurationError("validation objects need at least val_points samples");
    const Batch batch = assemble(chunk, views, indices);
    const Tensor features = model.encode(batch.images);
    const Tensor logits = model.occupancy_logits(features, batch.points);
    total += bce_loss(Var(logits), batch.labels).value().item() * double(chunk.size());
    count += chunk.size();
  }
  return total / double(count);
}

TrainResult train(OccupancyModel& model, const TrainingData& data, const TrainConfig& config,
                  const std::function<void(const HistoryRow&)>& on_row) {
  config.validate();
  if (data.train.empty()) throw ConfigurationError("training split is empty");
  const bool val_from_train = data.val.empty();
  const std::vector<TrainingObject>& val_objects = val_from_train ? data.train : data.val;
  // Training draws stay clear of the held-out tail when validation reuses training objects.
  std::size_t pool = data.train.front().samples.size();
  for (const auto& o : data.train) pool = std::min(pool, o.samples.size());
  if (val_from_train) {
    if (pool <= config.val_points) throw ConfigurationError("sample pools too small to hold out validation points");
    pool -= config.val_points;
  }

  std::vector<Var*> params;
  ParameterSet set = model.parameters();
  for (auto& p : set.parameters) params.push_back(p.var);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result{{}, model, 0, std::numeric_limits<double>::infinity(), val_from_train};
  AdamState adam;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<const TrainingObject*> chunk;
    std::vector<std::size_t> views;
    std::vector<std::vector<std::size_t>> indices;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const TrainingObject& o = data.train[order[cursor++]];
      chunk.push_back(&o);
      views.push_back(std::uniform_int_distribution<std::size_t>(0, o.images.size() - 1)(rng));
      std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
      std::vector<std::size_t> idx(config.points_per_object);
      for (auto& i : idx) i = pick(rng);
      indices.push_back(std::move(idx));
    }
    const Batch batch = assemble(chunk, views, indices);

    model.zero_grad();
    const Var logits = model.forward(Var(batch.images), Var(batch.points), Mode::train);
    const Var loss = bce_loss(logits, batch.labels);
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw TrainingDivergedError("loss became non-finite at step " + std::to_string(step));
    try {
      backward(loss);
    } catch (const NonFiniteError& e) {
      throw TrainingDivergedError("gradient became non-finite at step " + std::to_string(step) + ": " + e.what());
    }
    TrainConfig scheduled = config;
    scheduled.learning_rate = config.learning_rate_at(step);
    adam_step(params, adam, scheduled);
    for (const Var* p : params)
      if (!p->value().all_finite())
        throw TrainingDivergedError("parameters became non-finite at step " + std::to_string(step));

    HistoryRow row{step, value, std::nullopt};
    if (step % config.val_interval == 0 || step == config.steps) {
      row.val_loss = validation_loss(model, val_objects, config);
      if (*row.val_loss < result.best_val_loss) {
        result.best_val_loss = *row.val_loss;
        result.best_step = step;
        result.best = model;
      }
    }
    result.history.push_back(row);
    if (on_row) on_row(row);
  }
  return result;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream out;
  out << "step,train_loss,val_loss\n";
  char buf[64];
  for (const auto& row : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,", row.step, row.train_loss);
    out << buf;
    if (row.val_loss) {
      std::snprintf(buf, sizeof buf, "%.9g", *row.val_loss);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace occattn
