#include "tempo/cae.hpp"
#include "tempo/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace tempo;

namespace {

DenseLayer layer(Eigen::MatrixXd w, Eigen::VectorXd b, Activation a) {
    return DenseLayer{std::move(w), std::move(b), a};
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = d(rng);
    }
    return m;
}

// Small random model with biases perturbed away from zero.
CaeModel random_model(std::mt19937_64& rng, Eigen::Index in, const CaeArchitecture& arch) {
    auto m = init_model(in, arch, rng());
    for (auto* side : {&m.encoder, &m.decoder}) {
        for (auto& l : *side) {
            l.weight = random_matrix(l.out(), l.in(), rng, 0.8);
            l.bias = random_matrix(l.out(), 1, rng, 0.3);
        }
    }
    return m;
}

double rel_err(double a, double n) {
    // Gradients smaller than the floor are compared absolutely; FD noise at h=1e-5 is ~1e-10.
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Central-difference check of every parameter; returns the worst relative error.
double gradient_check(CaeModel m, const Eigen::MatrixXd& batch, double lambda) {
    const auto analytic = loss_and_grad(m, batch, lambda).grad;
    constexpr double h = 1e-5;
    double worst = 0.0;
    auto probe = [&](double& p, double g) {
        const double saved = p;
        p = saved + h;
        const double up = loss(m, batch, lambda).total;
        p = saved - h;
        const double down = loss(m, batch, lambda).total;
        p = saved;
        worst = std::max(worst, rel_err(g, (up - down) / (2 * h)));
    };
    for (std::size_t l = 0; l < m.encoder.size(); ++l) {
        for (Eigen::Index i = 0; i < m.encoder[l].weight.size(); ++i) {
            probe(m.encoder[l].weight.data()[i], analytic.encoder_weight[l].data()[i]);
        }
        for (Eigen::Index i = 0; i < m.encoder[l].bias.size(); ++i) {
            probe(m.encoder[l].bias[i], analytic.encoder_bias[l][i]);
        }
    }
    for (std::size_t l = 0; l < m.decoder.size(); ++l) {
        for (Eigen::Index i = 0; i < m.decoder[l].weight.size(); ++i) {
            probe(m.decoder[l].weight.data()[i], analytic.decoder_weight[l].data()[i]);
        }
        for (Eigen::Index i = 0; i < m.decoder[l].bias.size(); ++i) {
            probe(m.decoder[l].bias[i], analytic.decoder_bias[l][i]);
        }
    }
    return worst;
}

Eigen::MatrixXd numeric_jacobian(const CaeModel& m, const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::MatrixXd j(m.bottleneck_dim(), x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        Eigen::VectorXd up = x;
        Eigen::VectorXd down = x;
        up[c] += h;
        down[c] -= h;
        j.col(c) = (encode(m, up) - encode(m, down)) / (2 * h);
    }
    return j;
}

bool same_params(const CaeModel& a, const CaeModel& b) {
    if (a.encoder.size() != b.encoder.size() || a.decoder.size() != b.decoder.size()) {
        return false;
    }
    for (std::size_t l = 0; l < a.encoder.size(); ++l) {
        if (a.encoder[l].weight != b.encoder[l].weight || a.encoder[l].bias != b.encoder[l].bias) {
            return false;
        }
    }
    for (std::size_t l = 0; l < a.decoder.size(); ++l) {
        if (a.decoder[l].weight != b.decoder[l].weight || a.decoder[l].bias != b.decoder[l].bias) {
            return false;
        }
    }
    return true;
}

CaeModel identity_autoencoder(Eigen::Index d) {
    CaeModel m;
    m.encoder.push_back(layer(Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d), Activation::identity));
    m.decoder.push_back(layer(Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d), Activation::identity));
    return m;
}

} // namespace

TEST_CASE("init_model shapes and determinism") {
    const auto m = init_model(1870, CaeArchitecture{}, 5);
    REQUIRE(m.encoder.size() == 3);
    CHECK(m.encoder[0].in() == 1870);
    CHECK(m.encoder[0].out() == 128);
    CHECK(m.encoder[1].out() == 64);
    CHECK(m.encoder[2].out() == 16);
    REQUIRE(m.decoder.size() == 3);
    CHECK(m.decoder[0].in() == 16);
    CHECK(m.decoder[0].out() == 64);
    CHECK(m.decoder[2].out() == 1870);
    CHECK(m.decoder[2].activation == Activation::identity);
    CHECK(m.encoder[2].activation == Activation::sigmoid);
    const double bound = 1.0 / std::sqrt(1870.0);
    CHECK(m.encoder[0].weight.cwiseAbs().maxCoeff() <= bound);

    CHECK(same_params(init_model(40, CaeArchitecture{}, 9), init_model(40, CaeArchitecture{}, 9)));
    CHECK_FALSE(same_params(init_model(40, CaeArchitecture{}, 9), init_model(40, CaeArchitecture{}, 10)));
    CHECK_THROWS_AS(init_model(0, CaeArchitecture{}, 1), InputError);
    CaeArchitecture bad;
    bad.hidden_dims = {4, 0};
    CHECK_THROWS_AS(init_model(5, bad, 1), InputError);
}

TEST_CASE("encode and decode fixed cases") {
    const auto id = identity_autoencoder(3);
    const Eigen::Vector3d x(0.5, -2.0, 7.0);
    CHECK(encode(id, x) == x);
    CHECK(decode(id, x) == x);

    CaeModel zero;
    zero.encoder.push_back(layer(Eigen::MatrixXd::Zero(4, 3), Eigen::VectorXd::Zero(4), Activation::sigmoid));
    zero.decoder.push_back(layer(Eigen::MatrixXd::Zero(3, 4), Eigen::VectorXd::Zero(3), Activation::sigmoid));
    CHECK(encode(zero, x) == Eigen::Vector4d::Constant(0.5));
    CHECK(decode(zero, Eigen::Vector4d::Ones()) == Eigen::Vector3d::Constant(0.5));
    CHECK(contractive_penalty(zero, x) == 0.0);
    CHECK_THROWS_AS(encode(zero, Eigen::Vector2d::Ones()), InputError);
    CHECK_THROWS_AS(decode(zero, Eigen::Vector3d::Ones()), InputError);

    // Independent 40-digit evaluation of this model.
    CaeModel m;
    Eigen::MatrixXd w1(2, 3);
    w1 << 0.5, -0.25, 0.1, 0.3, 0.8, -0.6;
    Eigen::MatrixXd w2(2, 2);
    w2 << 1.2, -0.7, 0.4, 0.9;
    m.encoder.push_back(layer(w1, Eigen::Vector2d(0.05, -0.1), Activation::sigmoid));
    m.encoder.push_back(layer(w2, Eigen::Vector2d(0.0, 0.2), Activation::sigmoid));
    Eigen::MatrixXd w3(3, 2);
    w3 << 1, 0, 0, 1, 1, -1;
    m.decoder.push_back(layer(w3, Eigen::Vector3d(0.1, 0.2, 0.3), Activation::identity));
    const auto z = encode(m, Eigen::Vector3d(0.3, -1.2, 2.0));
    CHECK(z[0] == doctest::Approx(0.67482533006291815).epsilon(1e-14));
    CHECK(z[1] == doctest::Approx(0.63633786926896943).epsilon(1e-14));
    CHECK(contractive_penalty(m, Eigen::Vector3d(0.3, -1.2, 2.0)) ==
          doctest::Approx(0.0019475697590561586).epsilon(1e-13));
    const auto r = decode(m, Eigen::Vector2d(0.25, 0.5));
    CHECK(r[0] == doctest::Approx(0.35));
    CHECK(r[1] == doctest::Approx(0.7));
    CHECK(r[2] == doctest::Approx(0.05));
}

TEST_CASE("contractive penalty") {
    CaeModel lin;
    Eigen::MatrixXd w(2, 3);
    w << 1, 2, 3, -4, 5, 0.5;
    lin.encoder.push_back(layer(w, Eigen::Vector2d::Zero(), Activation::identity));
    lin.decoder.push_back(layer(Eigen::MatrixXd::Ones(3, 2), Eigen::Vector3d::Zero(), Activation::identity));
    CHECK(contractive_penalty(lin, Eigen::Vector3d(1, 1, 1)) == doctest::Approx(w.squaredNorm()));

    std::mt19937_64 rng(31);
    CaeArchitecture arch;
    arch.hidden_dims = {4};
    arch.bottleneck_dim = 3;
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_model(rng, 5, arch);
        const Eigen::VectorXd x = random_matrix(5, 1, rng);
        const auto num = numeric_jacobian(m, x);
        const auto jac = encoder_jacobian(m, x);
        const double p = contractive_penalty(m, x);
        REQUIRE(p >= 0.0);
        CHECK(std::abs(p - num.squaredNorm()) <= 1e-6 * p);
        CHECK((jac - num).norm() <= 1e-6 * jac.norm());
    }
}

TEST_CASE("loss terms") {
    const auto id = identity_autoencoder(4);
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd batch = random_matrix(4, 6, rng);
    const auto zero = loss(id, batch, 0.0);
    CHECK(zero.total == 0.0);
    CHECK(zero.reconstruction == 0.0);
    CHECK_THROWS_AS(loss(id, Eigen::MatrixXd(4, 0), 0.0), InputError);

    CaeArchitecture arch;
    arch.hidden_dims = {5};
    arch.bottleneck_dim = 3;
    const auto m = random_model(rng, 4, arch);
    double mse = 0.0;
    double pen = 0.0;
    for (Eigen::Index c = 0; c < batch.cols(); ++c) {
        mse += (batch.col(c) - decode(m, encode(m, batch.col(c)))).squaredNorm();
        pen += contractive_penalty(m, batch.col(c));
    }
    mse /= static_cast<double>(batch.cols());
    pen /= static_cast<double>(batch.cols());
    const auto l0 = loss(m, batch, 0.0);
    CHECK(l0.total == doctest::Approx(mse).epsilon(1e-13));
    const auto l1 = loss(m, batch, 0.1);
    CHECK(l1.total == doctest::Approx(l0.total + 0.1 * pen).epsilon(1e-13));
    double prev = -1.0;
    for (double lam : {0.0, 0.01, 0.5, 3.0, 100.0}) {
        const double v = loss(m, batch, lam).total;
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("analytic gradient of a 6-4-3 model") {
    std::mt19937_64 rng(77);
    CaeArchitecture arch;
    arch.hidden_dims = {4};
    arch.bottleneck_dim = 3;
    const auto m = random_model(rng, 6, arch);
    const Eigen::MatrixXd batch = random_matrix(6, 5, rng);
    CHECK(gradient_check(m, batch, 0.0) <= 1e-4);
    CHECK(gradient_check(m, batch, 0.5) <= 1e-4);

    const auto id = identity_autoencoder(3);
    const auto g = loss_and_grad(id, Eigen::MatrixXd::Zero(3, 4), 0.0).grad;
    CHECK(g.encoder_weight[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.decoder_weight[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient check over 20 random configurations") {
    std::mt19937_64 rng(2024);
    const Activation acts[] = {Activation::sigmoid, Activation::tanh, Activation::identity};
    for (int trial = 0; trial < 20; ++trial) {
        CaeArchitecture arch;
        arch.hidden_dims.clear();
        const auto depth = rng() % 3;
        for (std::size_t d = 0; d < depth; ++d) {
            arch.hidden_dims.push_back(2 + static_cast<Eigen::Index>(rng() % 4));
        }
        arch.bottleneck_dim = 2 + static_cast<Eigen::Index>(rng() % 2);
        arch.hidden_activation = acts[rng() % 2];
        arch.output_activation = acts[rng() % 3];
        const auto in = 3 + static_cast<Eigen::Index>(rng() % 5);
        const auto m = random_model(rng, in, arch);
        const Eigen::MatrixXd batch = random_matrix(in, 1 + static_cast<Eigen::Index>(rng() % 5), rng);
        const double lambda = trial % 3 == 0 ? 0.0 : std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        CAPTURE(trial);
        CAPTURE(lambda);
        const double worst = gradient_check(m, batch, lambda);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("training behaviour") {
    std::mt19937_64 rng(5);
    CaeArchitecture arch;
    arch.hidden_dims = {8};
    arch.bottleneck_dim = 4;
    const Eigen::MatrixXd one = random_matrix(10, 1, rng);
    TrainConfig cfg;
    cfg.lambda = 0.0;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 1500;
    cfg.batch_size = 1;
    cfg.seed = 3;
    const double initial = loss(init_model(10, arch, cfg.seed), one, 0.0).reconstruction;
    const auto res = train(one, arch, cfg);
    REQUIRE(res.history.size() == cfg.epochs);
    CHECK(loss(res.model, one, 0.0).reconstruction <= 1e-3 * initial);

    const Eigen::MatrixXd data = random_matrix(10, 40, rng);
    cfg.epochs = 20;
    cfg.batch_size = 8;
    const auto a = train(data, arch, cfg);
    const auto b = train(data, arch, cfg);
    CHECK(same_params(a.model, b.model));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].mean.total == b.history[i].mean.total);
        CHECK(std::isfinite(a.history[i].mean.total));
    }

    auto big = cfg;
    big.lambda = 1e3;
    const auto c = train(data, arch, big);
    double pen0 = 0.0;
    double pen1 = 0.0;
    for (Eigen::Index i = 0; i < data.cols(); ++i) {
        pen0 += contractive_penalty(a.model, data.col(i));
        pen1 += contractive_penalty(c.model, data.col(i));
    }
    CHECK(pen1 < pen0);

    CaeArchitecture linear;
    linear.hidden_dims = {6};
    linear.bottleneck_dim = 3;
    linear.hidden_activation = Activation::identity;
    auto wild = cfg;
    wild.optimizer = OptimizerKind::sgd;
    wild.learning_rate = 50.0;
    const Eigen::MatrixXd loud = random_matrix(10, 40, rng, 100.0);
    CHECK_THROWS_AS(train(loud, linear, wild), DivergenceError);

    auto invalid = cfg;
    invalid.learning_rate = 0.0;
    CHECK_THROWS_AS(train(data, arch, invalid), InputError);
    CHECK_THROWS_AS(train(Eigen::MatrixXd(10, 0), arch, cfg), InputError);
}

TEST_CASE("model serialization") {
    std::mt19937_64 rng(12);
    CaeArchitecture arch;
    arch.hidden_dims = {7, 5};
    arch.bottleneck_dim = 3;
    arch.hidden_activation = Activation::tanh;
    const auto m = random_model(rng, 9, arch);
    const auto bytes = serialize_model(m);
    CHECK(bytes.substr(0, 4) == "CAE1");
    const auto back = deserialize_model(bytes);
    CHECK(same_params(m, back));
    CHECK(serialize_model(back) == bytes);
    for (int i = 0; i < 100; ++i) {
        const Eigen::VectorXd x = random_matrix(9, 1, rng);
        REQUIRE(encode(m, x) == encode(back, x));
        REQUIRE(decode(m, encode(m, x)) == decode(back, encode(back, x)));
    }

    CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(deserialize_model("CAE2" + bytes.substr(4)), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(deserialize_model(bad_version), FormatError);

    const auto path = std::filesystem::temp_directory_path() / "tempo_model_test.cae";
    save_model(m, path);
    CHECK(same_params(load_model(path), m));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_model(path), IoError);
}
