#include "lsn/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lsn/errors.hpp"

namespace lsn {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr char kMagic[8] = {'L', 'S', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint64_t kOrderSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kDroppedRngSalt = 0xD1B54A32D192ED03ULL;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void num(T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    bytes(b, sizeof(T));
  }
  void str(const std::string& s) {
    num<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void scalars(const std::vector<Scalar>& v) {
    for (Scalar x : v) num(x);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path_ + ": byte " + std::to_string(pos_) + ": " + msg);
  }
  void bytes(void* out, std::size_t n) {
    if (data_.size() - pos_ < n) fail("unexpected end of file");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T num() {
    unsigned char b[sizeof(T)];
    bytes(b, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::uint64_t count(std::uint64_t limit, const char* what) {
    const std::size_t at = pos_;
    const auto n = num<std::uint64_t>();
    if (n > limit) {
      pos_ = at;
      fail(std::string("implausible ") + what + " " + std::to_string(n));
    }
    return n;
  }
  std::string str() {
    const std::uint64_t n = count(data_.size() - pos_ - 8 + 8, "string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<Scalar> scalars(std::size_t n) {
    if ((data_.size() - pos_) / sizeof(Scalar) < n) fail("unexpected end of file");
    std::vector<Scalar> v(n);
    for (Scalar& x : v) x = num<Scalar>();
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InventoryError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InventoryError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void check_finite(const LossBreakdown& l, std::uint64_t step) {
  if (!std::isfinite(l.total)) {
    throw ValueError("non-finite loss at step " + std::to_string(step));
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void AdamState::reset(const ParameterStore& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& [name, t] : params.entries()) {
    m.emplace_back(t.numel(), Scalar(0));
    v.emplace_back(t.numel(), Scalar(0));
  }
}

void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg) {
  const auto& entries = params.entries();
  if (state.m.size() != entries.size()) state.reset(params);
  for (const auto& [name, t] : entries) {
    for (Scalar g : t.grad()) {
      if (!std::isfinite(g)) throw ValueError("non-finite gradient in parameter " + name);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].second;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw DimensionError("optimizer state does not match parameter " + entries[i].first);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      m[j] = static_cast<Scalar>(cfg.beta1 * m[j] + (1 - cfg.beta1) * gj);
      v[j] = static_cast<Scalar>(cfg.beta2 * v[j] + (1 - cfg.beta2) * gj * gj);
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      double wj = w[j];
      wj -= cfg.lr * cfg.weight_decay * wj;
      wj -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      w[j] = static_cast<Scalar>(wj);
    }
  }
}

double grad_norm(const ParameterStore& params) {
  double s = 0;
  for (const auto& [name, t] : params.entries()) {
    for (Scalar g : t.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const double f = max_norm / norm;
    for (const auto& [name, t] : params.entries()) {
      if (!t.has_grad()) continue;
      for (Scalar& g : t.grad_buffer()) g = static_cast<Scalar>(g * f);
    }
  }
  return norm;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t epoch) {
  return dir / ("ckpt_epoch_" + std::to_string(epoch) + ".bin");
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.num<std::uint32_t>(c.version);
  w.num<std::uint32_t>(sizeof(Scalar));
  w.num(c.config_hash);
  w.num(c.epoch);
  w.num(c.step);
  w.num(c.wall_seconds);
  w.str(c.rng_state);
  w.num(c.adam_step);
  w.num<std::uint64_t>(c.tensors.size());
  for (const auto& e : c.tensors) {
    w.str(e.name);
    w.num<std::uint64_t>(e.shape.size());
    for (std::size_t d : e.shape) w.num<std::uint64_t>(d);
    w.scalars(e.value);
    w.scalars(e.m);
    w.scalars(e.v);
  }
  write_file_atomic(path, w.data());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InventoryError("checkpoint not found: " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}), path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint file");
  Checkpoint c;
  c.version = r.num<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw UnsupportedVersionError(path.string() + ": checkpoint version " + std::to_string(c.version) +
                                  ", expected " + std::to_string(kCheckpointVersion));
  }
  if (r.num<std::uint32_t>() != sizeof(Scalar)) r.fail("checkpoint was written with a different scalar type");
  c.config_hash = r.num<std::uint64_t>();
  c.epoch = r.num<std::uint64_t>();
  c.step = r.num<std::uint64_t>();
  c.wall_seconds = r.num<double>();
  c.rng_state = r.str();
  c.adam_step = r.num<std::uint64_t>();
  const std::uint64_t n = r.count(r.remaining(), "tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    Checkpoint::Entry e;
    e.name = r.str();
    const std::uint64_t nd = r.count(8, "tensor rank");
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < nd; ++d) {
      e.shape.push_back(static_cast<std::size_t>(r.count(r.remaining(), "dimension")));
      numel *= e.shape.back();
    }
    e.value = r.scalars(numel);
    e.m = r.scalars(numel);
    e.v = r.scalars(numel);
    c.tensors.push_back(std::move(e));
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return c;
}

Trainer::Trainer(const ExperimentConfig& cfg)
    : cfg_(cfg), model_(std::make_unique<LaneSegModel>(cfg)), rng_(cfg.seed ^ kOrderSalt) {
  adam_.reset(model_->params());
}

Trainer::Trainer(const ExperimentConfig& cfg, const Checkpoint& ckpt, const TrainOptions& opts) : Trainer(cfg) {
  if (ckpt.config_hash != cfg.hash()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "config hash mismatch: checkpoint %016llx, config %016llx",
                  static_cast<unsigned long long>(ckpt.config_hash), static_cast<unsigned long long>(cfg.hash()));
    throw ConfigError(buf);
  }
  const auto& entries = model_->params().entries();
  if (ckpt.tensors.size() != entries.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                         std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = ckpt.tensors[i];
    Tensor p = entries[i].second;
    if (e.name != entries[i].first || e.shape != p.shape()) {
      throw DimensionError("checkpoint tensor " + e.name + " " + shape_str(e.shape) + " does not match " +
                           entries[i].first + " " + shape_str(p.shape()));
    }
    std::copy(e.value.begin(), e.value.end(), p.mutable_data().begin());
    adam_.m[i] = e.m;
    adam_.v[i] = e.v;
  }
  adam_.step = ckpt.adam_step;
  if (opts.drop_optimizer_state) adam_.reset(model_->params());
  if (opts.drop_rng_state) {
    rng_ = Rng(cfg.seed ^ kDroppedRngSalt ^ ckpt.epoch);
  } else {
    rng_.set_state(ckpt.rng_state);
  }
  epoch_ = ckpt.epoch;
  step_ = ckpt.step;
  wall_seconds_ = ckpt.wall_seconds;
}

double Trainer::current_lr() const {
  if (cfg_.warmup_steps == 0) return cfg_.lr;
  return cfg_.lr * std::min(1.0, static_cast<double>(step_ + 1) / static_cast<double>(cfg_.warmup_steps));
}

LossBreakdown Trainer::step(const std::vector<const Scene*>& batch) {
  ParameterStore& params = model_->params();
  params.zero_grad();
  std::size_t frames = 0;
  for (const Scene* s : batch) frames += s->frames.size();
  if (frames == 0) throw InputError("training batch has no frames");
  const double share = 1.0 / static_cast<double>(frames);
  LossBreakdown sum;
  for (const Scene* s : batch) {
    std::optional<Tensor> history;
    for (std::size_t t = 0; t < s->frames.size(); ++t) {
      Tape tape;
      const FrameOutput out = model_->forward_frame(tape, s->frames[t], history, frame_motion(*s, t));
      const LossResult lr = total_loss(tape, out.layers, s->groundtruth[t], cfg_.extent, model_->loss_weights());
      check_finite(lr.breakdown, step_);
      tape.backward(ops::scale(tape, lr.loss, static_cast<Scalar>(share)));
      sum.total += share * lr.breakdown.total;
      sum.cls += share * lr.breakdown.cls;
      sum.pts += share * lr.breakdown.pts;
      sum.bnd += share * lr.breakdown.bnd;
      history = out.bev.detach();
    }
  }
  clip_grad_norm(params, cfg_.grad_clip);
  adam_step(params, adam_, AdamConfig{current_lr(), cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay});
  ++step_;
  return sum;
}

LossBreakdown Trainer::scene_loss(const Scene& scene) const {
  LossBreakdown sum;
  const double share = 1.0 / static_cast<double>(scene.frames.size());
  std::optional<Tensor> history;
  for (std::size_t t = 0; t < scene.frames.size(); ++t) {
    Tape tape(false);
    const FrameOutput out = model_->forward_frame(tape, scene.frames[t], history, frame_motion(scene, t));
    const LossResult lr = total_loss(tape, out.layers, scene.groundtruth[t], cfg_.extent, model_->loss_weights());
    sum.total += share * lr.breakdown.total;
    sum.cls += share * lr.breakdown.cls;
    sum.pts += share * lr.breakdown.pts;
    sum.bnd += share * lr.breakdown.bnd;
    history = out.bev.detach();
  }
  return sum;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_hash = cfg_.hash();
  c.epoch = epoch_;
  c.step = step_;
  c.wall_seconds = wall_seconds_;
  c.rng_state = rng_.state();
  c.adam_step = adam_.step;
  const auto& entries = model_->params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Tensor& p = entries[i].second;
    c.tensors.push_back({entries[i].first, p.shape(), p.values(), adam_.m[i], adam_.v[i]});
  }
  return c;
}

TrainLog Trainer::run(const std::vector<Scene>& data, const TrainOptions& opts) {
  if (data.empty()) throw InputError("training dataset is empty");
  const std::size_t batch = std::max<std::size_t>(1, cfg_.batch_size);
  const std::filesystem::path dir = cfg_.checkpoint_dir;
  std::ofstream steps_csv, epochs_csv;
  std::filesystem::path last_ckpt;
  if (opts.write_files) {
    std::filesystem::create_directories(dir);
    const auto open = [&](std::ofstream& f, const std::filesystem::path& p, const char* header) {
      const bool fresh = !std::filesystem::exists(p) || std::filesystem::file_size(p) == 0;
      f.open(p, std::ios::app);
      if (!f) throw InventoryError("cannot write " + p.string());
      if (fresh) f << header << "\n";
    };
    open(steps_csv, dir / "train_log.csv", "step,epoch,loss_total,loss_cls,loss_pts,loss_bnd,wall_ms");
    open(epochs_csv, dir / "epochs.csv", "epoch,seconds,mean_loss,step_ms_sum");
    if (epoch_ > 0) last_ckpt = checkpoint_path(dir, epoch_);
  }

  TrainLog log;
  while (epoch_ < cfg_.epochs) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);
    const auto epoch_start = Clock::now();
    EpochRecord er;
    er.epoch = epoch_ + 1;
    std::size_t n_steps = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::vector<const Scene*> scenes;
      for (std::size_t i = b; i < std::min(order.size(), b + batch); ++i) scenes.push_back(&data[order[i]]);
      std::sort(scenes.begin(), scenes.end(), [](const Scene* a, const Scene* c) { return a->id < c->id; });
      const auto t0 = Clock::now();
      StepRecord sr;
      try {
        sr.loss = step(scenes);
      } catch (const ValueError& e) {
        throw ValueError(std::string(e.what()) + "; training stopped" +
                         (last_ckpt.empty() ? std::string(", no checkpoint written yet")
                                            : ", last good checkpoint " + last_ckpt.string()));
      }
      sr.wall_ms = 1000.0 * seconds_since(t0);
      sr.step = step_;
      sr.epoch = er.epoch;
      er.mean_loss += sr.loss.total;
      er.step_ms_sum += sr.wall_ms;
      ++n_steps;
      if (opts.write_files) {
        steps_csv << sr.step << "," << sr.epoch << "," << fmt(sr.loss.total) << "," << fmt(sr.loss.cls) << ","
                  << fmt(sr.loss.pts) << "," << fmt(sr.loss.bnd) << "," << fmt(sr.wall_ms) << "\n";
      }
      log.steps.push_back(sr);
      if (opts.on_step) opts.on_step(sr);
    }
    er.seconds = seconds_since(epoch_start);
    er.mean_loss /= static_cast<double>(n_steps);
    wall_seconds_ += er.seconds;
    ++epoch_;
    log.epochs.push_back(er);
    if (opts.write_files) {
      steps_csv.flush();
      epochs_csv << er.epoch << "," << fmt(er.seconds) << "," << fmt(er.mean_loss) << "," << fmt(er.step_ms_sum)
                 << "\n";
      epochs_csv.flush();
      const bool periodic = cfg_.checkpoint_every > 0 && epoch_ % cfg_.checkpoint_every == 0;
      if (periodic || epoch_ == cfg_.epochs) {
        last_ckpt = checkpoint_path(dir, epoch_);
        save_checkpoint(checkpoint(), last_ckpt);
      }
    }
    if (opts.on_epoch) opts.on_epoch(er);
  }
  if (opts.write_files && epoch_ == 0) save_checkpoint(checkpoint(), checkpoint_path(dir, 0));
  return log;
}

TrainLog train(const ExperimentConfig& cfg, const std::vector<Scene>& data, const TrainOptions& opts) {
  Trainer t(cfg);
  return t.run(data, opts);
}

TrainLog resume(const std::filesystem::path& ckpt_path, const ExperimentConfig& cfg, const std::vector<Scene>& data,
                const TrainOptions& opts) {
  Trainer t(cfg, load_checkpoint(ckpt_path), opts);
  return t.run(data, opts);
}

std::vector<ScenePredictions> predict_dataset(const LaneSegModel& model, const std::vector<Scene>& scenes) {
  std::vector<ScenePredictions> out;
  for (const Scene& s : scenes) out.push_back({s.id, model.predict_scene(s)});
  return out;
}

std::vector<SuiteRow> run_experiment_suite(const ExperimentConfig& base, const std::vector<std::string>& presets,
                                           const std::vector<Scene>& train_set, const std::vector<Scene>& eval_set,
                                           const std::function<void(const SuiteRow&)>& on_row) {
  std::vector<SuiteRow> rows;
  for (const std::string& name : presets) {
    const ExperimentConfig cfg = experiment_preset(name, base);
    Trainer t(cfg);
    TrainOptions opts;
    opts.write_files = false;
    const TrainLog log = t.run(train_set, opts);
    SuiteRow row;
    row.preset = name;
    row.epochs = cfg.epochs;
    for (const auto& e : log.epochs) row.sec_per_epoch += e.seconds;
    if (!log.epochs.empty()) row.sec_per_epoch /= static_cast<double>(log.epochs.size());
    row.map = evaluate(predict_dataset(t.model(), eval_set), eval_set).map;
    if (on_row) on_row(row);
    rows.push_back(row);
  }
  return rows;
}

std::string format_suite_table(const std::vector<SuiteRow>& rows) {
  std::string s = "preset            epochs  sec/epoch      mAP\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-16s  %6llu  %9.3f  %7.4f\n", r.preset.c_str(),
                  static_cast<unsigned long long>(r.epochs), r.sec_per_epoch, r.map);
    s += buf;
  }
  return s;
}

}  // namespace lsn
