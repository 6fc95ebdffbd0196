#include "wid/convnet.hpp"

#include "wid/container.hpp"
#include "wid/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace wid {

// ---------------------------------------------------------------------------
// ConvSpec

void ConvSpec::validate() const {
  if (in_channels < 1) fail(ErrorKind::ShapeError, "in_channels must be >= 1");
  if (classes < 2) fail(ErrorKind::ShapeError, "classifier head needs >= 2 classes");
  for (const auto& b : blocks) {
    if (b.filters < 1) fail(ErrorKind::ShapeError, "filter count must be >= 1");
    if (b.stride != 1 && b.stride != 2) fail(ErrorKind::ShapeError, "stride must be 1 or 2");
  }
  if (blocks[0].filters != 32 || blocks[0].stride != 1)
    fail(ErrorKind::ShapeError, "block 1 must be 32 filters with stride 1");
  if (!(bn_eps > 0) || !(bn_momentum >= 0 && bn_momentum < 1))
    fail(ErrorKind::ShapeError, "batch-norm constants out of range");
}

int ConvSpec::output_side(int n, int layer) const {
  for (int b = 0; b < layer; ++b)
    if (blocks[b].stride == 2) n = (n + 1) / 2;
  return n;
}

void to_json(nlohmann::json& j, const ConvSpec& spec) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : spec.blocks) blocks.push_back({{"filters", b.filters}, {"stride", b.stride}});
  j = {{"blocks", blocks},
       {"in_channels", spec.in_channels},
       {"classes", spec.classes},
       {"bn_momentum", spec.bn_momentum},
       {"bn_eps", spec.bn_eps}};
}

void from_json(const nlohmann::json& j, ConvSpec& spec) {
  const auto& blocks = j.at("blocks");
  if (!blocks.is_array() || blocks.size() != kConvBlocks)
    fail(ErrorKind::ShapeError, "spec must list exactly 6 blocks");
  for (int b = 0; b < kConvBlocks; ++b) {
    spec.blocks[b].filters = blocks[b].at("filters").get<int>();
    spec.blocks[b].stride = blocks[b].at("stride").get<int>();
  }
  spec.in_channels = j.value("in_channels", 1);
  spec.classes = j.value("classes", 26);
  spec.bn_momentum = j.value("bn_momentum", 0.9);
  spec.bn_eps = j.value("bn_eps", 1e-5);
}

// ---------------------------------------------------------------------------
// NetWeights

template <typename Scalar>
NetWeights<Scalar> NetWeights<Scalar>::zeros(const ConvSpec& spec) {
  spec.validate();
  NetWeights w;
  w.spec = spec;
  for (int b = 0; b < kConvBlocks; ++b) {
    const int f = spec.blocks[b].filters;
    auto& blk = w.blocks[b];
    blk.kernel = Mat<Scalar>::Zero(f, 9 * spec.in_channels_of(b));
    blk.bias = Vec<Scalar>::Zero(f);
    blk.gamma = Vec<Scalar>::Zero(f);
    blk.beta = Vec<Scalar>::Zero(f);
    blk.running_mean = Vec<Scalar>::Zero(f);
    blk.running_var = Vec<Scalar>::Ones(f);
  }
  w.head_weight = Mat<Scalar>::Zero(spec.classes, spec.blocks.back().filters);
  w.head_bias = Vec<Scalar>::Zero(spec.classes);
  return w;
}

template <typename Scalar>
NetWeights<Scalar> NetWeights<Scalar>::initialize(const ConvSpec& spec, std::uint64_t seed) {
  NetWeights w = zeros(spec);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](Mat<Scalar>& m, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  };
  for (auto& blk : w.blocks) {
    fill_uniform(blk.kernel, std::sqrt(6.0 / static_cast<double>(blk.kernel.cols())));
    blk.gamma.setOnes();
  }
  fill_uniform(w.head_weight, 1.0 / std::sqrt(static_cast<double>(w.head_weight.cols())));
  w.meta.seed = seed;
  return w;
}

template <typename Scalar>
template <typename To>
NetWeights<To> NetWeights<Scalar>::cast() const {
  NetWeights<To> out;
  out.spec = spec;
  out.meta = meta;
  for (int b = 0; b < kConvBlocks; ++b) {
    const auto& s = blocks[b];
    auto& d = out.blocks[b];
    d.kernel = s.kernel.template cast<To>();
    d.bias = s.bias.template cast<To>();
    d.gamma = s.gamma.template cast<To>();
    d.beta = s.beta.template cast<To>();
    d.running_mean = s.running_mean.template cast<To>();
    d.running_var = s.running_var.template cast<To>();
  }
  out.head_weight = head_weight.template cast<To>();
  out.head_bias = head_bias.template cast<To>();
  return out;
}

template <typename Scalar>
void NetWeights<Scalar>::validate() const {
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::WeightMismatch, e.what());
  }
  for (int b = 0; b < kConvBlocks; ++b) {
    const auto& blk = blocks[b];
    const Eigen::Index f = spec.blocks[b].filters;
    if (blk.kernel.rows() != f || blk.kernel.cols() != 9 * spec.in_channels_of(b) ||
        blk.bias.size() != f || blk.gamma.size() != f || blk.beta.size() != f ||
        blk.running_mean.size() != f || blk.running_var.size() != f)
      fail(ErrorKind::WeightMismatch, "block " + std::to_string(b + 1) + " tensor shapes");
    if ((blk.running_var.array() <= Scalar(0)).any())
      fail(ErrorKind::WeightMismatch, "non-positive running variance in block " + std::to_string(b + 1));
  }
  if (head_weight.rows() != spec.classes || head_weight.cols() != spec.blocks.back().filters ||
      head_bias.size() != spec.classes)
    fail(ErrorKind::WeightMismatch, "head tensor shapes");
}

template <typename Scalar>
std::vector<ParamView<Scalar>> parameters(NetWeights<Scalar>& w) {
  std::vector<ParamView<Scalar>> out;
  for (int b = 0; b < kConvBlocks; ++b) {
    auto& blk = w.blocks[b];
    const std::string p = "block" + std::to_string(b + 1) + ".";
    out.push_back({p + "kernel", blk.kernel.data(), blk.kernel.size()});
    out.push_back({p + "bias", blk.bias.data(), blk.bias.size()});
    out.push_back({p + "gamma", blk.gamma.data(), blk.gamma.size()});
    out.push_back({p + "beta", blk.beta.data(), blk.beta.size()});
  }
  out.push_back({"head.weight", w.head_weight.data(), w.head_weight.size()});
  out.push_back({"head.bias", w.head_bias.data(), w.head_bias.size()});
  return out;
}

template <typename Scalar>
Grid<Scalar> FeatureStack<Scalar>::map(int f) const {
  Grid<Scalar> g(height, width);
  for (Eigen::Index p = 0; p < maps.cols(); ++p) g.data()[p] = maps(f, p);
  return g;
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

/// channels x (batch * height * width); column = (n * height + y) * width + x.
template <typename Scalar>
struct Activation {
  Mat<Scalar> data;
  int batch = 0, height = 0, width = 0;
};

template <typename Scalar>
Mat<Scalar> im2col(const Activation<Scalar>& in, int stride, int out_h, int out_w) {
  const Eigen::Index c = in.data.rows();
  Mat<Scalar> col = Mat<Scalar>::Zero(9 * c, static_cast<Eigen::Index>(in.batch) * out_h * out_w);
  for (int n = 0; n < in.batch; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index p = (static_cast<Eigen::Index>(n) * out_h + oy) * out_w + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in.width) continue;
            const Eigen::Index q = (static_cast<Eigen::Index>(n) * in.height + iy) * in.width + ix;
            col.col(p).segment((ky * 3 + kx) * c, c) = in.data.col(q);
          }
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
Mat<Scalar> col2im(const Mat<Scalar>& col, Eigen::Index channels, int batch, int in_h, int in_w,
                   int stride, int out_h, int out_w) {
  Mat<Scalar> out = Mat<Scalar>::Zero(channels, static_cast<Eigen::Index>(batch) * in_h * in_w);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index p = (static_cast<Eigen::Index>(n) * out_h + oy) * out_w + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in_w) continue;
            const Eigen::Index q = (static_cast<Eigen::Index>(n) * in_h + iy) * in_w + ix;
            out.col(q) += col.col(p).segment((ky * 3 + kx) * channels, channels);
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Activation<Scalar> input_activation(const Eigen::Ref<const Mat<Scalar>>& images, int rows,
                                    int cols) {
  if (images.cols() != static_cast<Eigen::Index>(rows) * cols)
    fail(ErrorKind::ShapeError, "image row length does not match rows*cols");
  Activation<Scalar> a;
  a.batch = static_cast<int>(images.rows());
  a.height = rows;
  a.width = cols;
  a.data.resize(1, images.size());
  for (Eigen::Index n = 0; n < images.rows(); ++n)
    a.data.middleCols(n * images.cols(), images.cols()) = images.row(n);
  return a;
}

template <typename Scalar>
struct BlockCache {
  Mat<Scalar> col;
  Mat<Scalar> relu;  // post-ReLU, pre-normalisation
  Mat<Scalar> xhat;
  Vec<Scalar> inv_std;
  Vec<Scalar> batch_mean, batch_var;
  int in_h = 0, in_w = 0;
};

/// conv -> ReLU, then batch norm with either batch statistics (training) or running ones.
template <typename Scalar>
Activation<Scalar> block_forward(const Activation<Scalar>& in, const ConvBlock<Scalar>& blk,
                                 int stride, double eps, BlockCache<Scalar>* cache) {
  const int out_h = (in.height + stride - 1) / stride;
  const int out_w = (in.width + stride - 1) / stride;
  Mat<Scalar> col = im2col(in, stride, out_h, out_w);
  Mat<Scalar> z = blk.kernel * col;
  z.colwise() += blk.bias;
  Mat<Scalar> r = z.cwiseMax(Scalar(0));

  Activation<Scalar> out;
  out.batch = in.batch;
  out.height = out_h;
  out.width = out_w;
  if (cache) {
    const auto count = static_cast<Scalar>(r.cols());
    Vec<Scalar> mean = r.rowwise().sum() / count;
    Mat<Scalar> centered = r.colwise() - mean;
    Vec<Scalar> var = centered.array().square().rowwise().sum().matrix() / count;
    Vec<Scalar> inv_std = (var.array() + static_cast<Scalar>(eps)).rsqrt().matrix();
    Mat<Scalar> xhat = (centered.array().colwise() * inv_std.array()).matrix();
    out.data = (xhat.array().colwise() * blk.gamma.array()).matrix();
    out.data.colwise() += blk.beta;
    cache->col = std::move(col);
    cache->relu = std::move(r);
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->in_h = in.height;
    cache->in_w = in.width;
  } else {
    const Vec<Scalar> scale =
        (blk.gamma.array() * (blk.running_var.array() + static_cast<Scalar>(eps)).rsqrt()).matrix();
    const Vec<Scalar> shift =
        (blk.beta.array() - blk.running_mean.array() * scale.array()).matrix();
    out.data = (r.array().colwise() * scale.array()).matrix();
    out.data.colwise() += shift;
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> global_average(const Activation<Scalar>& a) {
  const Eigen::Index hw = static_cast<Eigen::Index>(a.height) * a.width;
  Mat<Scalar> g(a.data.rows(), a.batch);
  for (int n = 0; n < a.batch; ++n)
    g.col(n) = a.data.middleCols(n * hw, hw).rowwise().sum() / static_cast<Scalar>(hw);
  return g;
}

template <typename Scalar>
struct TrainPass {
  Scalar loss = 0;
  int correct = 0;
  std::array<Vec<Scalar>, kConvBlocks> batch_mean, batch_var;
  Eigen::Index per_channel_count[kConvBlocks] = {};
};

template <typename Scalar>
TrainPass<Scalar> train_pass(const NetWeights<Scalar>& w, const Eigen::Ref<const Mat<Scalar>>& images,
                             int rows, int cols, const std::vector<int>& labels,
                             NetWeights<Scalar>* grads) {
  const int batch = static_cast<int>(images.rows());
  if (static_cast<int>(labels.size()) != batch) fail(ErrorKind::ShapeError, "label count");
  for (int l : labels)
    if (l < 0 || l >= w.spec.classes) fail(ErrorKind::LabelOutOfRange, std::to_string(l));

  std::array<BlockCache<Scalar>, kConvBlocks> caches;
  Activation<Scalar> act = input_activation<Scalar>(images, rows, cols);
  for (int b = 0; b < kConvBlocks; ++b)
    act = block_forward(act, w.blocks[b], w.spec.blocks[b].stride, w.spec.bn_eps, &caches[b]);

  const Mat<Scalar> pooled = global_average(act);
  Mat<Scalar> logits = w.head_weight * pooled;
  logits.colwise() += w.head_bias;

  TrainPass<Scalar> pass;
  Mat<Scalar> prob(logits.rows(), logits.cols());
  for (int n = 0; n < batch; ++n) {
    const Scalar peak = logits.col(n).maxCoeff();
    prob.col(n) = (logits.col(n).array() - peak).exp().matrix();
    const Scalar total = prob.col(n).sum();
    prob.col(n) /= total;
    pass.loss -= logits(labels[n], n) - peak - std::log(total);
    Eigen::Index arg;
    logits.col(n).maxCoeff(&arg);
    if (arg == labels[n]) ++pass.correct;
  }
  pass.loss /= static_cast<Scalar>(batch);
  for (int b = 0; b < kConvBlocks; ++b) {
    pass.batch_mean[b] = caches[b].batch_mean;
    pass.batch_var[b] = caches[b].batch_var;
    pass.per_channel_count[b] = caches[b].relu.cols();
  }
  if (!grads) return pass;

  *grads = NetWeights<Scalar>::zeros(w.spec);
  Mat<Scalar> dlogits = prob;
  for (int n = 0; n < batch; ++n) dlogits(labels[n], n) -= Scalar(1);
  dlogits /= static_cast<Scalar>(batch);
  grads->head_weight = dlogits * pooled.transpose();
  grads->head_bias = dlogits.rowwise().sum();
  const Mat<Scalar> dpooled = w.head_weight.transpose() * dlogits;

  const Eigen::Index hw = static_cast<Eigen::Index>(act.height) * act.width;
  Mat<Scalar> dy(act.data.rows(), act.data.cols());
  for (int n = 0; n < batch; ++n)
    dy.middleCols(n * hw, hw) = (dpooled.col(n) / static_cast<Scalar>(hw)).replicate(1, hw);

  for (int b = kConvBlocks - 1; b >= 0; --b) {
    const auto& blk = w.blocks[b];
    auto& g = grads->blocks[b];
    auto& c = caches[b];
    const auto count = static_cast<Scalar>(c.relu.cols());

    g.beta = dy.rowwise().sum();
    g.gamma = dy.cwiseProduct(c.xhat).rowwise().sum();
    Mat<Scalar> dxhat = (dy.array().colwise() * blk.gamma.array()).matrix();
    const Vec<Scalar> sum1 = dxhat.rowwise().sum();
    const Vec<Scalar> sum2 = dxhat.cwiseProduct(c.xhat).rowwise().sum();
    Mat<Scalar> dz = ((dxhat.array() * count).colwise() - sum1.array() -
                      (c.xhat.array().colwise() * sum2.array()))
                         .colwise() *
                     (c.inv_std.array() / count);
    dz = (c.relu.array() > Scalar(0)).select(dz, Scalar(0));

    g.kernel = dz * c.col.transpose();
    g.bias = dz.rowwise().sum();
    if (b == 0) break;
    const Mat<Scalar> dcol = blk.kernel.transpose() * dz;
    const int stride = w.spec.blocks[b].stride;
    const int out_h = (c.in_h + stride - 1) / stride;
    const int out_w = (c.in_w + stride - 1) / stride;
    dy = col2im<Scalar>(dcol, w.spec.in_channels_of(b), batch, c.in_h, c.in_w, stride, out_h, out_w);
  }
  return pass;
}

}  // namespace

template <typename Scalar>
Scalar loss_and_gradients(const NetWeights<Scalar>& weights,
                          const Eigen::Ref<const Mat<Scalar>>& images, int rows, int cols,
                          const std::vector<int>& labels, NetWeights<Scalar>* grads) {
  return train_pass(weights, images, rows, cols, labels, grads).loss;
}

template <typename Scalar>
std::vector<bool> relu_pattern(const NetWeights<Scalar>& w, const Eigen::Ref<const Mat<Scalar>>& images,
                               int rows, int cols) {
  std::vector<bool> out;
  Activation<Scalar> act = input_activation<Scalar>(images, rows, cols);
  for (int b = 0; b < kConvBlocks; ++b) {
    BlockCache<Scalar> cache;
    act = block_forward(act, w.blocks[b], w.spec.blocks[b].stride, w.spec.bn_eps, &cache);
    for (Eigen::Index i = 0; i < cache.relu.size(); ++i) out.push_back(cache.relu.data()[i] > 0);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> predict_logits(const NetWeights<Scalar>& w, const Eigen::Ref<const Mat<Scalar>>& images,
                           int rows, int cols) {
  Activation<Scalar> act = input_activation<Scalar>(images, rows, cols);
  for (int b = 0; b < kConvBlocks; ++b)
    act = block_forward<Scalar>(act, w.blocks[b], w.spec.blocks[b].stride, w.spec.bn_eps, nullptr);
  Mat<Scalar> logits = w.head_weight * global_average(act);
  logits.colwise() += w.head_bias;
  return logits;
}

template <typename Scalar>
std::vector<FeatureStack<Scalar>> forward_all(const Grid<Scalar>& image,
                                              const NetWeights<Scalar>& w, int upto_layer,
                                              int min_side) {
  if (upto_layer < 1 || upto_layer > kConvBlocks)
    fail(ErrorKind::ShapeError, "layer must be in 1..6");
  if (image.rows() < min_side || image.cols() < min_side)
    fail(ErrorKind::ShapeError, "input smaller than the minimum fragment side");
  if (w.spec.in_channels != 1) fail(ErrorKind::WeightMismatch, "expected a single-channel network");

  Activation<Scalar> act;
  act.batch = 1;
  act.height = static_cast<int>(image.rows());
  act.width = static_cast<int>(image.cols());
  act.data = Eigen::Map<const Mat<Scalar>>(image.data(), 1, image.size());

  std::vector<FeatureStack<Scalar>> out;
  for (int b = 0; b < upto_layer; ++b) {
    act = block_forward<Scalar>(act, w.blocks[b], w.spec.blocks[b].stride, w.spec.bn_eps, nullptr);
    FeatureStack<Scalar> fs;
    fs.layer = b + 1;
    fs.height = act.height;
    fs.width = act.width;
    fs.maps = act.data;
    out.push_back(std::move(fs));
  }
  return out;
}

template <typename Scalar>
FeatureStack<Scalar> forward(const Grid<Scalar>& image, const NetWeights<Scalar>& w, int upto_layer,
                             int min_side) {
  return std::move(forward_all(image, w, upto_layer, min_side).back());
}

// ---------------------------------------------------------------------------
// Training

namespace {

Mat<float> gather_rows(const LabeledImages& set, std::span<const std::size_t> idx) {
  Mat<float> out(static_cast<Eigen::Index>(idx.size()), set.pixels.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = set.pixels.row(idx[i]);
  return out;
}

void check_set(const LabeledImages& set, const ConvSpec& spec, const char* name) {
  if (set.size() == 0) fail(ErrorKind::EmptyDataset, name);
  if (static_cast<std::size_t>(set.pixels.rows()) != set.size() ||
      set.pixels.cols() != static_cast<Eigen::Index>(set.rows) * set.cols)
    fail(ErrorKind::ShapeError, std::string(name) + " pixel matrix shape");
  for (int l : set.labels)
    if (l < 0 || l >= spec.classes)
      fail(ErrorKind::LabelOutOfRange, std::string(name) + " label " + std::to_string(l));
}

}  // namespace

double accuracy(const NetWeights<float>& weights, const LabeledImages& set, int batch_size) {
  if (set.size() == 0) return 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Mat<float> logits = predict_logits<float>(weights, gather_rows(set, idx), set.rows, set.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Eigen::Index arg;
      logits.col(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      if (arg == set.labels[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainResult train_classifier(const LabeledImages& train, const LabeledImages& val,
                             const ConvSpec& spec, const TrainOptions& opt,
                             const std::function<void(const EpochReport&)>& on_epoch) {
  spec.validate();
  check_set(train, spec, "training set");
  check_set(val, spec, "validation set");
  if (opt.batch_size < 2) fail(ErrorKind::ShapeError, "batch size must be >= 2");

  NetWeights<float> w = NetWeights<float>::initialize(spec, opt.seed);
  w.meta.epochs = opt.epochs;
  NetWeights<float> m = NetWeights<float>::zeros(spec), v = NetWeights<float>::zeros(spec);
  auto wp = parameters(w), mp = parameters(m), vp = parameters(v);

  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.weights = w;
  double best = -1;
  long step = 0;
  const auto momentum = static_cast<float>(spec.bn_momentum);

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        opt.learning_rate * std::pow(opt.lr_decay, (epoch - 1) / std::max(1, opt.lr_step_epochs));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    std::size_t correct = 0, seen = 0;
    NetWeights<float> g;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      if (end - start < 2) break;  // batch statistics need two samples
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];

      const auto pass = train_pass<float>(w, gather_rows(train, idx), train.rows, train.cols, labels, &g);
      loss_sum += static_cast<double>(pass.loss) * static_cast<double>(idx.size());
      correct += static_cast<std::size_t>(pass.correct);
      seen += idx.size();

      ++step;
      const double c1 = 1 - std::pow(opt.beta1, static_cast<double>(step));
      const double c2 = 1 - std::pow(opt.beta2, static_cast<double>(step));
      const auto step_size = static_cast<float>(lr / c1);
      const auto b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
      const auto inv_c2 = static_cast<float>(1.0 / c2);
      const auto eps = static_cast<float>(opt.adam_eps);
      auto gp = parameters(g);
      for (std::size_t t = 0; t < wp.size(); ++t) {
        Eigen::Map<Eigen::ArrayXf> p(wp[t].data, wp[t].size), mm(mp[t].data, mp[t].size),
            vv(vp[t].data, vp[t].size);
        Eigen::Map<const Eigen::ArrayXf> grad(gp[t].data, gp[t].size);
        mm = b1 * mm + (1 - b1) * grad;
        vv = b2 * vv + (1 - b2) * grad.square();
        p -= step_size * mm / ((vv * inv_c2).sqrt() + eps);
      }
      for (int b = 0; b < kConvBlocks; ++b) {
        const auto n = static_cast<float>(pass.per_channel_count[b]);
        auto& blk = w.blocks[b];
        blk.running_mean = momentum * blk.running_mean + (1 - momentum) * pass.batch_mean[b];
        blk.running_var =
            momentum * blk.running_var + (1 - momentum) * pass.batch_var[b] * (n / (n - 1));
      }
    }

    EpochReport rep;
    rep.epoch = epoch;
    rep.learning_rate = lr;
    rep.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0;
    rep.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0;
    rep.val_accuracy = accuracy(w, val);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rep);
    if (on_epoch) on_epoch(rep);

    if (rep.val_accuracy > best) {
      best = rep.val_accuracy;
      result.weights = w;
      result.weights.meta.best_epoch = epoch;
      result.weights.meta.val_accuracy = rep.val_accuracy;
    }
    if (rep.val_accuracy >= opt.target_accuracy) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::string_view kWeightsMagic = "SIDW0001";

struct TensorEntry {
  std::string name;
  std::vector<Eigen::Index> shape;
};

std::vector<TensorEntry> tensor_layout(const ConvSpec& spec) {
  std::vector<TensorEntry> out;
  for (int b = 0; b < kConvBlocks; ++b) {
    const Eigen::Index f = spec.blocks[b].filters;
    const std::string p = "block" + std::to_string(b + 1) + ".";
    out.push_back({p + "kernel", {f, 9 * static_cast<Eigen::Index>(spec.in_channels_of(b))}});
    for (const char* n : {"bias", "gamma", "beta", "running_mean", "running_var"})
      out.push_back({p + n, {f}});
  }
  out.push_back({"head.weight", {spec.classes, spec.blocks.back().filters}});
  out.push_back({"head.bias", {spec.classes}});
  return out;
}

std::vector<float*> tensor_data(NetWeights<float>& w) {
  std::vector<float*> out;
  for (auto& blk : w.blocks) {
    out.push_back(blk.kernel.data());
    out.push_back(blk.bias.data());
    out.push_back(blk.gamma.data());
    out.push_back(blk.beta.data());
    out.push_back(blk.running_mean.data());
    out.push_back(blk.running_var.data());
  }
  out.push_back(w.head_weight.data());
  out.push_back(w.head_bias.data());
  return out;
}

Eigen::Index element_count(const std::vector<Eigen::Index>& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1}, std::multiplies<>());
}

}  // namespace

void save_weights(const NetWeights<float>& weights, const std::filesystem::path& path) {
  weights.validate();
  NetWeights<float> w = weights;
  const auto layout = tensor_layout(w.spec);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : layout) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  nlohmann::json header = {{"format", "SIDW"},
                           {"version", 1},
                           {"spec", w.spec},
                           {"seed", w.meta.seed},
                           {"epochs", w.meta.epochs},
                           {"epoch", w.meta.best_epoch},
                           {"val_accuracy", w.meta.val_accuracy},
                           {"digest", w.meta.dataset_digest},
                           {"config_digest", w.meta.config_digest},
                           {"tensors", tensors}};
  std::vector<std::uint8_t> payload;
  const auto ptrs = tensor_data(w);
  for (std::size_t i = 0; i < layout.size(); ++i)
    append_f32(payload, std::span<const float>(ptrs[i], static_cast<std::size_t>(element_count(layout[i].shape))));
  write_container(path, kWeightsMagic, header, payload);
}

NetWeights<float> load_weights(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  const auto bytes = read_file_bytes(path);

  ConvSpec spec;
  std::vector<TensorEntry> layout;
  auto payload_size = [&](const nlohmann::json& h) -> std::size_t {
    if (h.value("version", 0) != 1 || h.value("format", "") != "SIDW")
      fail(ErrorKind::FormatVersionMismatch, "unsupported weight file version");
    try {
      spec = h.at("spec").get<ConvSpec>();
      spec.validate();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatVersionMismatch, e.what());
    } catch (const Error& e) {
      fail(ErrorKind::WeightMismatch, e.what());
    }
    layout = tensor_layout(spec);
    const auto& declared = h.at("tensors");
    if (!declared.is_array() || declared.size() != layout.size())
      fail(ErrorKind::WeightMismatch, "tensor list does not match spec");
    std::size_t total = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (declared[i].at("name").get<std::string>() != layout[i].name ||
          declared[i].at("shape").get<std::vector<Eigen::Index>>() != layout[i].shape)
        fail(ErrorKind::WeightMismatch, "tensor " + layout[i].name + " shape differs from spec");
      total += 4 * static_cast<std::size_t>(element_count(layout[i].shape));
    }
    return total;
  };
  const Container c = decode_container(bytes, kWeightsMagic, payload_size);

  NetWeights<float> w = NetWeights<float>::zeros(spec);
  w.meta.seed = c.header.value("seed", std::uint64_t{0});
  w.meta.epochs = c.header.value("epochs", 0);
  w.meta.best_epoch = c.header.value("epoch", 0);
  w.meta.val_accuracy = c.header.value("val_accuracy", 0.0);
  w.meta.dataset_digest = c.header.value("digest", "");
  w.meta.config_digest = c.header.value("config_digest", "");
  const auto ptrs = tensor_data(w);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layout.size(); ++i)
    read_f32(c.payload, offset,
             std::span<float>(ptrs[i], static_cast<std::size_t>(element_count(layout[i].shape))));
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define WID_INSTANTIATE(S)                                                                        \
  template struct NetWeights<S>;                                                                  \
  template struct FeatureStack<S>;                                                                \
  template std::vector<ParamView<S>> parameters(NetWeights<S>&);                                  \
  template S loss_and_gradients(const NetWeights<S>&, const Eigen::Ref<const Mat<S>>&, int, int,  \
                                const std::vector<int>&, NetWeights<S>*);                         \
  template std::vector<bool> relu_pattern(const NetWeights<S>&, const Eigen::Ref<const Mat<S>>&, int, int); \
  template Mat<S> predict_logits(const NetWeights<S>&, const Eigen::Ref<const Mat<S>>&, int, int); \
  template std::vector<FeatureStack<S>> forward_all(const Grid<S>&, const NetWeights<S>&, int, int); \
  template FeatureStack<S> forward(const Grid<S>&, const NetWeights<S>&, int, int);

WID_INSTANTIATE(float)
WID_INSTANTIATE(double)
#undef WID_INSTANTIATE

template NetWeights<double> NetWeights<float>::cast<double>() const;
template NetWeights<float> NetWeights<double>::cast<float>() const;
template NetWeights<float> NetWeights<float>::cast<float>() const;
template NetWeights<double> NetWeights<double>::cast<double>() const;

}  // namespace wid
