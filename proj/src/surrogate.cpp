#include "lossforge/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace lossforge::surrogate {

namespace {

constexpr double kPi = 3.14159265358979323846;

void stratified_split(Dataset& ds, double val_fraction) {
    const int k = ds.num_classes();
    std::vector<std::vector<int>> by_class(k);
    for (int i = 0; i < ds.size(); ++i) {
        int cls = 0;
        ds.labels.row(i).maxCoeff(&cls);
        by_class[cls].push_back(i);
    }
    for (const auto& members : by_class) {
        const int n_val = static_cast<int>(std::lround(members.size() * val_fraction));
        for (std::size_t j = 0; j < members.size(); ++j) {
            if (static_cast<int>(j) < n_val) {
                ds.val_idx.push_back(members[j]);
            } else {
                ds.train_idx.push_back(members[j]);
            }
        }
    }
    std::sort(ds.train_idx.begin(), ds.train_idx.end());
    std::sort(ds.val_idx.begin(), ds.val_idx.end());
}

}  // namespace

Dataset generate_synthetic(SyntheticKind kind, int n, int num_classes, int dim,
                           double noise, std::uint64_t seed, double val_fraction) {
    if (n < num_classes || num_classes < 2 || dim < 1) {
        throw std::invalid_argument("generate_synthetic: invalid dimensions");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset ds;
    ds.features.resize(n, dim);
    ds.labels = Matrix::Zero(n, num_classes);

    if (kind == SyntheticKind::Blobs) {
        Matrix centers(num_classes, dim);
        for (int c = 0; c < num_classes; ++c) {
            for (int j = 0; j < dim; ++j) centers(c, j) = 3.0 * gauss(rng);
        }
        for (int i = 0; i < n; ++i) {
            const int c = i % num_classes;  // balanced by construction
            for (int j = 0; j < dim; ++j) {
                ds.features(i, j) = centers(c, j) + noise * gauss(rng);
            }
            ds.labels(i, c) = 1.0;
        }
    } else {
        if (dim < 2) throw std::invalid_argument("spirals need dim >= 2");
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int i = 0; i < n; ++i) {
            const int c = i % num_classes;
            const double t = unit(rng);
            const double r = 0.2 + 0.8 * t;
            const double a = 2.0 * kPi * (1.5 * t + static_cast<double>(c) / num_classes);
            ds.features.row(i).setZero();
            ds.features(i, 0) = r * std::cos(a) + noise * gauss(rng);
            ds.features(i, 1) = r * std::sin(a) + noise * gauss(rng);
            for (int j = 2; j < dim; ++j) ds.features(i, j) = noise * gauss(rng);
            ds.labels(i, c) = 1.0;
        }
    }
    stratified_split(ds, val_fraction);
    return ds;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                row.push_back(v);
            } catch (...) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (line_no == 1) continue;  // header
            throw LoadError(path + ":" + std::to_string(line_no) + ": non-numeric cell");
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw LoadError(path + ":" + std::to_string(line_no) + ": column count mismatch");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.front().size() < 2) {
        throw LoadError(path + ": need at least one row and two columns");
    }
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows.front().size()) - 1;
    int k = 0;
    for (const auto& row : rows) {
        const double lab = row.back();
        if (lab < 0 || lab != std::floor(lab)) {
            throw LoadError(path + ": labels must be non-negative integers");
        }
        k = std::max(k, static_cast<int>(lab) + 1);
    }
    if (k < 2) throw LoadError(path + ": need at least two classes");
    Dataset ds;
    ds.features.resize(n, d);
    ds.labels = Matrix::Zero(n, k);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) ds.features(i, j) = rows[i][j];
        ds.labels(i, static_cast<int>(rows[i].back())) = 1.0;
    }
    stratified_split(ds, 0.10);
    return ds;
}

std::string dataset_csv(const Dataset& ds) {
    std::string out;
    char buf[64];
    for (int i = 0; i < ds.size(); ++i) {
        for (int j = 0; j < ds.dim(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,", ds.features(i, j));
            out += buf;
        }
        int cls = 0;
        ds.labels.row(i).maxCoeff(&cls);
        out += std::to_string(cls);
        out += '\n';
    }
    return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw LoadError(path + ": truncated at byte " + std::to_string(offset));
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw LoadError("cannot open " + images_path);
    if (read_be32(img, images_path, 0) != 0x00000803u) {
        throw LoadError(images_path + ": bad magic at byte 0 (want 0x00000803)");
    }
    const std::uint32_t n = read_be32(img, images_path, 4);
    const std::uint32_t rows = read_be32(img, images_path, 8);
    const std::uint32_t cols = read_be32(img, images_path, 12);
    const std::size_t d = std::size_t(rows) * cols;

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw LoadError("cannot open " + labels_path);
    if (read_be32(lab, labels_path, 0) != 0x00000801u) {
        throw LoadError(labels_path + ": bad magic at byte 0 (want 0x00000801)");
    }
    if (read_be32(lab, labels_path, 4) != n) {
        throw LoadError(labels_path + ": image/label count mismatch");
    }

    std::vector<unsigned char> pix(d);
    std::vector<unsigned char> labels(n);
    if (!lab.read(reinterpret_cast<char*>(labels.data()), n)) {
        throw LoadError(labels_path + ": truncated at byte 8");
    }
    int k = 0;
    for (auto l : labels) k = std::max(k, int(l) + 1);
    if (k < 2) throw LoadError(labels_path + ": need at least two classes");

    Dataset ds;
    ds.features.resize(n, static_cast<int>(d));
    ds.labels = Matrix::Zero(n, k);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(d))) {
            throw LoadError(images_path + ": truncated at byte " +
                            std::to_string(16 + std::size_t(i) * d));
        }
        for (std::size_t j = 0; j < d; ++j) {
            ds.features(i, static_cast<int>(j)) = pix[j] / 255.0;
        }
        ds.labels(i, labels[i]) = 1.0;
    }
    stratified_split(ds, 0.10);
    return ds;
}

NetworkState init_network(const NetworkSpec& spec) {
    std::mt19937_64 rng(spec.init_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    NetworkState net;
    std::vector<int> widths;
    widths.push_back(spec.input_dim);
    for (int h : spec.hidden) widths.push_back(h);
    widths.push_back(spec.num_classes);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        Matrix w(out, in);
        const double scale = std::sqrt(2.0 / in);  // He init for ReLU
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) w(r, c) = scale * gauss(rng);
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Eigen::VectorXd::Zero(out));
    }
    return net;
}

namespace {

Matrix softmax_rows(Matrix logits) {
    for (int i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - mx).exp();
        logits.row(i) /= logits.row(i).sum();
    }
    return logits;
}

// Forward keeping pre-activation ReLU masks and activations for backprop.
struct ForwardTrace {
    std::vector<Matrix> activations;  // activations[0] = input batch
    Matrix probs;
};

ForwardTrace forward_trace(const NetworkState& net, const Matrix& batch) {
    ForwardTrace t;
    t.activations.push_back(batch);
    Matrix a = batch;
    const std::size_t last = net.weights.size() - 1;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Matrix z = a * net.weights[l].transpose();
        z.rowwise() += net.biases[l].transpose();
        if (l < last) {
            a = z.cwiseMax(0.0);
            t.activations.push_back(a);
        } else {
            t.probs = softmax_rows(std::move(z));
        }
    }
    return t;
}

}  // namespace

Matrix forward(const NetworkState& net, const Matrix& batch) {
    if (batch.cols() != net.weights.front().cols()) {
        throw std::invalid_argument("forward: batch width mismatch");
    }
    return forward_trace(net, batch).probs;
}

BackpropResult backprop(const NetworkState& net, const Matrix& batch,
                        const Matrix& targets, const LossGraph& g) {
    const int B = static_cast<int>(batch.rows());
    const int K = static_cast<int>(targets.cols());
    const ForwardTrace trace = forward_trace(net, batch);

    std::vector<double> y_flat(B * K), p_flat(B * K), g_flat(B * K);
    for (int i = 0; i < B; ++i) {
        for (int j = 0; j < K; ++j) {
            y_flat[i * K + j] = targets(i, j);
            p_flat[i * K + j] = trace.probs(i, j);
        }
    }
    BackpropResult out;
    out.probs = trace.probs;
    out.loss = graph::loss(g, y_flat, p_flat);
    graph::loss_gradient(g, y_flat, p_flat, g_flat);

    // softmax backprop: dL/dz_j = p_j * (g_j - sum_i g_i p_i)
    Matrix delta(B, K);
    for (int i = 0; i < B; ++i) {
        double dot = 0.0;
        for (int j = 0; j < K; ++j) dot += g_flat[i * K + j] * trace.probs(i, j);
        for (int j = 0; j < K; ++j) {
            delta(i, j) = trace.probs(i, j) * (g_flat[i * K + j] - dot);
        }
    }

    const std::size_t layers = net.weights.size();
    out.grad_w.resize(layers);
    out.grad_b.resize(layers);
    Matrix d = std::move(delta);
    for (std::size_t l = layers; l-- > 0;) {
        out.grad_w[l] = d.transpose() * trace.activations[l];
        out.grad_b[l] = d.colwise().sum().transpose();
        if (l > 0) {
            Matrix back = d * net.weights[l];
            // ReLU mask from the stored activations
            back = ((trace.activations[l].array() > 0.0).cast<double>() * back.array())
                       .matrix();
            d = std::move(back);
        }
    }
    return out;
}

double learning_rate(const TrainConfig& cfg, int step) {
    if (step < cfg.warmup_steps) {
        return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
    }
    const int total = cfg.steps - 1;
    if (total <= cfg.warmup_steps) return 0.0;
    const double frac = static_cast<double>(step - cfg.warmup_steps) /
                        (total - cfg.warmup_steps);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(kPi * frac));
}

double accuracy(const NetworkState& net, const Dataset& ds, const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    Matrix batch(idx.size(), ds.dim());
    for (std::size_t i = 0; i < idx.size(); ++i) batch.row(i) = ds.features.row(idx[i]);
    const Matrix probs = forward(net, batch);
    int correct = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        int pred = 0, truth = 0;
        probs.row(i).maxCoeff(&pred);
        ds.labels.row(idx[i]).maxCoeff(&truth);
        if (pred == truth) ++correct;
    }
    return static_cast<double>(correct) / idx.size();
}

TrainRun train(const NetworkSpec& spec, const Dataset& ds, const LossGraph& g,
               const TrainConfig& cfg) {
    NetworkState net = init_network(spec);
    std::mt19937_64 rng(cfg.seed + 1);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.train_idx.size()) - 1);

    const std::size_t layers = net.weights.size();
    std::vector<Matrix> vel_w, m_w, v_w;
    std::vector<Eigen::VectorXd> vel_b, m_b, v_b;
    for (std::size_t l = 0; l < layers; ++l) {
        vel_w.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
        vel_b.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
        if (cfg.adam) {
            m_w.push_back(vel_w[l]);
            v_w.push_back(vel_w[l]);
            m_b.push_back(vel_b[l]);
            v_b.push_back(vel_b[l]);
        }
    }

    TrainRun run;
    const int B = cfg.batch_size;
    const int K = ds.num_classes();
    Matrix batch(B, ds.dim());
    Matrix targets(B, K);

    auto record = [&](int step, double train_acc, double batch_loss) {
        const double val = accuracy(net, ds, ds.val_idx);
        run.best_val_acc = std::max(run.best_val_acc, val);
        run.curve.push_back({step, train_acc, val, batch_loss});
    };

    for (int step = 0; step < cfg.steps; ++step) {
        for (int i = 0; i < B; ++i) {
            const int idx = ds.train_idx[pick(rng)];
            batch.row(i) = ds.features.row(idx);
            targets.row(i) = ds.labels.row(idx);
        }
        BackpropResult bp;
        try {
            bp = backprop(net, batch, targets, g);
        } catch (const std::runtime_error&) {
            run.stop_reason = StopReason::EarlyStopMain;
            break;
        }
        bool finite = std::isfinite(bp.loss);
        for (std::size_t l = 0; l < layers && finite; ++l) {
            finite = bp.grad_w[l].allFinite() && bp.grad_b[l].allFinite();
        }
        if (!finite) {
            run.stop_reason = StopReason::EarlyStopMain;
            break;
        }
        const double batch_loss = bp.loss;

        const double lr = learning_rate(cfg, step);
        for (std::size_t l = layers; l-- > 0;) {
            const Matrix& grad_w = bp.grad_w[l];
            const Eigen::VectorXd& grad_b = bp.grad_b[l];
            if (cfg.adam) {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                const double t = step + 1;
                m_w[l] = b1 * m_w[l] + (1 - b1) * grad_w;
                v_w[l] = b2 * v_w[l].array() + (1 - b2) * grad_w.array().square();
                m_b[l] = b1 * m_b[l] + (1 - b1) * grad_b;
                v_b[l] = b2 * v_b[l].array() + (1 - b2) * grad_b.array().square();
                const double corr = std::sqrt(1 - std::pow(b2, t)) / (1 - std::pow(b1, t));
                net.weights[l].array() -=
                    lr * corr * m_w[l].array() / (v_w[l].array().sqrt() + eps);
                net.biases[l].array() -=
                    lr * corr * m_b[l].array() / (v_b[l].array().sqrt() + eps);
            } else {
                vel_w[l] = cfg.momentum * vel_w[l] - lr * grad_w;
                vel_b[l] = cfg.momentum * vel_b[l] - lr * grad_b;
                net.weights[l] += vel_w[l];
                net.biases[l] += vel_b[l];
            }
        }

        const bool eval_now = step % cfg.eval_interval == 0 || step == cfg.steps - 1;
        if (eval_now) {
            int correct = 0;
            for (int i = 0; i < B; ++i) {
                int pred = 0, truth = 0;
                bp.probs.row(i).maxCoeff(&pred);
                targets.row(i).maxCoeff(&truth);
                if (pred == truth) ++correct;
            }
            record(step, static_cast<double>(correct) / B, batch_loss);
        }
        if (step == cfg.main_check_step) {
            run.final_train_acc = accuracy(net, ds, ds.train_idx);
            if (run.final_train_acc < cfg.main_threshold) {
                run.stop_reason = StopReason::EarlyStopMain;
                break;
            }
        }
    }
    run.final_train_acc = accuracy(net, ds, ds.train_idx);
    if (run.curve.empty()) record(0, 0.0, 0.0);
    return run;
}

bool proxy_screen(const LossGraph& g, const Dataset& ds, const TrainConfig& cfg) {
    NetworkSpec small;
    small.input_dim = ds.dim();
    small.hidden = {16};
    small.num_classes = ds.num_classes();
    small.init_seed = cfg.seed;
    TrainConfig proxy_cfg = cfg;
    proxy_cfg.steps = cfg.proxy_steps;
    proxy_cfg.warmup_steps = std::min(cfg.warmup_steps, cfg.proxy_steps / 4);
    proxy_cfg.main_check_step = cfg.proxy_steps + 1;  // rule 2 off in the proxy
    const TrainRun run = train(small, ds, g, proxy_cfg);
    return run.final_train_acc >= cfg.proxy_threshold;
}

evolve::FitnessFn make_fitness(const Dataset& ds, const NetworkSpec& spec,
                               const TrainConfig& cfg) {
    return [&ds, spec, cfg](const LossGraph& g) -> std::optional<double> {
        if (!proxy_screen(g, ds, cfg)) return std::nullopt;
        return train(spec, ds, g, cfg).best_val_acc;
    };
}

std::string curves_csv(const TrainRun& run) {
    std::string out = "step,train_acc,val_acc,loss\n";
    char buf[128];
    for (const auto& p : run.curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", p.step, p.train_acc,
                      p.val_acc, p.loss);
        out += buf;
    }
    return out;
}

}  // namespace lossforge::surrogate
