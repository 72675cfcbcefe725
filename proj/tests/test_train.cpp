#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "model_fixtures.hpp"
#include "pifi/autograd/ops.hpp"
#include "pifi/data/synthetic.hpp"
#include "pifi/errors.hpp"
#include "pifi/train/metrics.hpp"
#include "pifi/train/trainer.hpp"

using namespace pifi;
using namespace pifi::train;

namespace {

std::vector<NamedParam<double>> scalar_param(ParamStore<double>& store, double value) {
    store.add("w", Tensor<double>(Shape{1}, {value}));
    return {{"w", &store.at("w")}};
}

GradMap<double> grad_of(double g) {
    GradMap<double> m;
    m.emplace("w", Tensor<double>(Shape{1}, {g}));
    return m;
}

double ce(std::vector<double> logits, std::size_t c, std::vector<std::int32_t> targets,
          std::optional<std::int32_t> ignore = std::nullopt) {
    Graph<double> g(false);
    const auto n = logits.size() / c;
    const auto x = g.constant(Tensor<double>(Shape{n, c}, std::move(logits)));
    return cross_entropy(x, std::span<const std::int32_t>(targets), ignore).value()[0];
}

// Two classes keyed by one polar word among neutral fillers; a bag-of-words
// logistic regression separates them exactly.
data::LabeledDataset separable_toy(std::size_t n, std::uint64_t seed) {
    const auto& vocab = data::synthetic_vocab();
    const auto dom = data::domain('A');
    Rng rng(seed);
    data::LabeledDataset d;
    d.label_names = {"negative", "positive"};
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::int32_t>(i % 2);
        const std::size_t key = rng.below(8) + (label == 1 ? 0 : 8);
        data::LabeledExample e;
        e.label = label;
        for (int k = 0; k < 3; ++k) e.tokens.push_back(vocab.id(dom.surface(16 + rng.below(24))));
        e.tokens.insert(e.tokens.begin() + static_cast<std::ptrdiff_t>(rng.below(4)), vocab.id(dom.surface(key)));
        d.examples.push_back(std::move(e));
    }
    return d;
}

model::SlmConfig small_encoder() {
    model::SlmConfig c = model::desk_slm(model::SlmFamily::encoder, data::synthetic_vocab().size());
    c.d_model = 32;
    c.n_layers = 1;
    c.d_ffn = 64;
    c.init_sigma = 1.0 / std::sqrt(32.0);
    c.max_positions = 16;
    return c;
}

model::PiFiConfig small_pifi(bool with_donor, model::FreezePolicy policy = model::FreezePolicy::donor_frozen) {
    model::PiFiConfig p;
    p.donor_block = fixtures::tiny_donor_block();
    if (with_donor) p.donor_layer_indices = {1};
    p.donor_init = model::DonorInit::random;
    p.donor_seed = 5;
    p.freeze_policy = policy;
    p.n_classes = 2;
    return p;
}

std::uint64_t donor_hash(model::PiFiModel<float>& m) { return params_hash(m.donor_params()); }

}  // namespace

TEST_CASE("adam: zero gradient on a fresh state leaves parameters unchanged") {
    ParamStore<double> store;
    auto params = scalar_param(store, 0.75);
    AdamState<double> st;
    TrainConfig cfg;
    cfg.lr = 0.1;
    for (int i = 0; i < 3; ++i) adam_step(params, grad_of(0.0), st, cfg);
    CHECK(store.value("w")[0] == 0.75);
    CHECK(st.t == 3);
}

TEST_CASE("adam: one-step hand case") {
    // m̂ = g and v̂ = g² after one step, so Δ = −α·g/(|g| + ε).
    for (double g : {1.0, -3.0, 0.25}) {
        ParamStore<double> store;
        auto params = scalar_param(store, 2.0);
        AdamState<double> st;
        TrainConfig cfg;
        cfg.lr = 1e-2;
        adam_step(params, grad_of(g), st, cfg);
        const double expected = 2.0 - 1e-2 * g / (std::abs(g) + cfg.adam_eps);
        CHECK(std::abs(store.value("w")[0] - expected) <= 1e-7);
        CHECK(std::abs(store.value("w")[0] - (2.0 - 1e-2 * (g > 0 ? 1 : -1))) <= 1e-7);
    }
}

TEST_CASE("adam: second step follows the recurrences") {
    ParamStore<double> store;
    auto params = scalar_param(store, 0.0);
    AdamState<double> st;
    TrainConfig cfg;
    cfg.lr = 1e-3;
    adam_step(params, grad_of(1.0), st, cfg);
    adam_step(params, grad_of(-2.0), st, cfg);
    const double m = 0.9 * 0.1 + 0.1 * -2.0, v = 0.999 * 0.001 + 0.001 * 4.0;
    const double step2 = 1e-3 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    const double step1 = 1e-3 / (1.0 + 1e-8);
    CHECK(store.value("w")[0] == doctest::Approx(-step1 - step2).epsilon(1e-12));
}

TEST_CASE("adam: rejects unknown, frozen and misshapen gradients without mutating") {
    ParamStore<double> store;
    store.add("a", Tensor<double>(Shape{2}, {1.0, 2.0}));
    store.add("b", Tensor<double>(Shape{1}, {3.0}), false);
    std::vector<NamedParam<double>> params{{"a", &store.at("a")}, {"b", &store.at("b")}};
    AdamState<double> st;
    TrainConfig cfg;
    GradMap<double> unknown;
    unknown.emplace("a", Tensor<double>(Shape{2}, {1.0, 1.0}));
    unknown.emplace("zz", Tensor<double>(Shape{1}, {1.0}));
    CHECK_THROWS_AS(adam_step(params, unknown, st, cfg), ContractError);
    GradMap<double> frozen;
    frozen.emplace("b", Tensor<double>(Shape{1}, {1.0}));
    CHECK_THROWS_AS(adam_step(params, frozen, st, cfg), ContractError);
    GradMap<double> shape;
    shape.emplace("a", Tensor<double>(Shape{1}, {1.0}));
    CHECK_THROWS_AS(adam_step(params, shape, st, cfg), ContractError);
    CHECK(store.value("a")[0] == 1.0);
    CHECK(st.t == 0);
}

TEST_CASE("adam: tensors absent from the gradient map are untouched") {
    ParamStore<double> store;
    store.add("a", Tensor<double>(Shape{1}, {1.0}));
    store.add("b", Tensor<double>(Shape{1}, {3.0}));
    std::vector<NamedParam<double>> params{{"a", &store.at("a")}, {"b", &store.at("b")}};
    AdamState<double> st;
    GradMap<double> g;
    g.emplace("a", Tensor<double>(Shape{1}, {0.5}));
    adam_step(params, g, st, TrainConfig{});
    CHECK(store.value("a")[0] != 1.0);
    CHECK(store.value("b")[0] == 3.0);
}

TEST_CASE("grad clipping scales to the max norm") {
    GradMap<double> g;
    g.emplace("a", Tensor<double>(Shape{2}, {3.0, 0.0}));
    g.emplace("b", Tensor<double>(Shape{1}, {4.0}));
    CHECK(grad_norm(g) == doctest::Approx(5.0));
    CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(grad_norm(g) == doctest::Approx(1.0));
    CHECK(g.at("b")[0] == doctest::Approx(0.8));
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.grad_clip = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("cross entropy closed forms") {
    CHECK(std::abs(ce({0.3, 0.3, 0.3, 0.3}, 4, {2}) - std::log(4.0)) <= 1e-6);
    CHECK(ce({2.0, 0.0}, 2, {0}) == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
    CHECK(std::abs(ce({2.0, 0.0}, 2, {0}) - 0.126928) <= 1e-6);
    CHECK(ce({30.0, 0.0, 0.0}, 3, {0}) < 1e-9);
    // Ignored rows drop out of the mean.
    CHECK(ce({2.0, 0.0, 5.0, -5.0}, 2, {0, -1}, -1) == doctest::Approx(std::log1p(std::exp(-2.0))));
    CHECK_THROWS_AS(ce({2.0, 0.0}, 2, {-1}, -1), ContractError);
}

TEST_CASE("classification metrics hand cases") {
    const std::vector<std::int32_t> golds{0, 1, 0, 1};
    const std::vector<std::int32_t> majority{0, 0, 0, 0};
    CHECK(accuracy(majority, golds) == 0.5);
    CHECK(macro_f1(majority, golds, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(binary_f1(majority, golds) == 0.0);
    CHECK(accuracy(golds, golds) == 1.0);
    CHECK(macro_f1(golds, golds, 2) == 1.0);
    // Only class 2 ever appears: the mean covers that one class.
    const std::vector<std::int32_t> single{2, 2, 2};
    CHECK(macro_f1(single, single, 4) == 1.0);
    // Hand confusion matrix over three classes.
    const std::vector<std::int32_t> g3{0, 0, 1, 1, 2, 2};
    const std::vector<std::int32_t> p3{0, 1, 1, 1, 0, 2};
    const double f0 = 0.5, f1 = 0.8, f2 = 2.0 / 3.0;
    CHECK(macro_f1(p3, g3, 3) == doctest::Approx((f0 + f1 + f2) / 3.0).epsilon(1e-15));
    CHECK(accuracy(p3, g3) + 2.0 / 6.0 == doctest::Approx(1.0));
    CHECK_THROWS_AS(accuracy(std::vector<std::int32_t>{}, std::vector<std::int32_t>{}), ContractError);
    CHECK_THROWS_AS(accuracy(golds, std::vector<std::int32_t>{0}), ContractError);
    CHECK_THROWS_AS(macro_f1(std::vector<std::int32_t>{5}, std::vector<std::int32_t>{0}, 2), ContractError);
}

TEST_CASE("generation metrics hand cases") {
    const std::vector<std::string> c{"a b c"}, r{"a b d"};
    CHECK(token_f1(c, r) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(rouge_l(c, r) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(exact_match(c, r) == 0.0);
    CHECK(exact_match({"  a   b "}, {"a b"}) == 1.0);

    // Clipped precisions 4/5, 3/4, 2/3, 1/2 multiply to 1/5.
    CHECK(bleu({"a b c d e"}, {"a b c d f"}) == doctest::Approx(std::pow(0.2, 0.25)).epsilon(1e-15));
    CHECK(bleu({"a b c d e"}, {"a b c d e"}) == 1.0);
    // Brevity penalty: c = 4, r = 5.
    CHECK(bleu({"a b c d"}, {"a b c d e"}) == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-15));
    // Clipping: "the the the" against one "the".
    CHECK(bleu({"the the the"}, {"the cat"}, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // Orders without a match use eps / count: p2 = 0.1 / 1.
    CHECK(bleu({"x y"}, {"x z"}, 2) == doctest::Approx(std::sqrt(0.5 * 0.1)).epsilon(1e-15));
    // Orders longer than every candidate drop out of the mean.
    CHECK(bleu({"a", "b c"}, {"a", "b c"}) == 1.0);
    CHECK(bleu({"a"}, {"b"}) == doctest::Approx(0.1).epsilon(1e-15));

    CHECK(exact_match({""}, {"a b"}) == 0.0);
    CHECK(token_f1({""}, {"a b"}) == 0.0);
    CHECK(bleu({""}, {"a b"}) == 0.0);
    CHECK(rouge_l({""}, {"a b"}) == 0.0);

    const std::vector<std::string> same{"x y z", "p q"};
    CHECK(exact_match(same, same) == 1.0);
    CHECK(bleu(same, same) == 1.0);
    CHECK(rouge_l(same, same) == 1.0);
    CHECK(token_f1(same, same) == 1.0);
}

TEST_CASE("ROUGE-L uses the longest common subsequence") {
    // LCS("a x b y c", "a b c") = 3: P = 3/5, R = 1.
    CHECK(rouge_l({"a x b y c"}, {"a b c"}) == doctest::Approx(2.0 * 0.6 / 1.6).epsilon(1e-15));
}

TEST_CASE("permutation test") {
    const std::vector<double> a{0, 0, 0, 0, 0}, b{1, 1, 1, 1, 1};
    CHECK(permutation_test(a, b, 1000, 1) == 2.0 / 252.0);
    CHECK(permutation_test(b, a, 1000, 1) == 2.0 / 252.0);
    CHECK(permutation_test(a, a, 1000, 1) == 1.0);

    std::vector<double> x, y;
    Rng rng(3);
    for (int i = 0; i < 12; ++i) x.push_back(rng.normal());
    for (int i = 0; i < 12; ++i) y.push_back(rng.normal() + 0.8);
    const double p = permutation_test(x, y, 2000, 9);
    CHECK(p == permutation_test(y, x, 2000, 9));
    CHECK(p == permutation_test(x, y, 2000, 9));
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    CHECK_THROWS_AS(permutation_test(a, b, 999, 1), ContractError);
    CHECK_THROWS_AS(permutation_test({}, b, 1000, 1), ContractError);
}

TEST_CASE("history records serialize as one JSON line") {
    HistoryRecord r{3, 1, 0.5, {{"accuracy", 0.75}}};
    const auto s = r.to_json();
    CHECK(s.find('\n') == std::string::npos);
    const auto j = nlohmann::json::parse(s);
    CHECK(j["step"] == 3);
    CHECK(j["epoch"] == 1);
    CHECK(j["loss"] == 0.5);
    CHECK(j["metrics"]["accuracy"] == 0.75);
}

TEST_CASE("first-batch loss of a fresh classifier is near ln C") {
    for (std::size_t c : {2u, 5u}) {
        auto slm = model::desk_slm(model::SlmFamily::encoder, data::synthetic_vocab().size());
        auto pc = small_pifi(false);
        pc.n_classes = c;
        auto m = model::build_pifi(slm, pc, nullptr, 11);
        auto d = data::gen_sentiment(data::domain('A'), 64, 4);
        for (std::size_t i = 0; i < d.examples.size(); ++i) d.examples[i].label = static_cast<std::int32_t>(i % c);
        d.label_names.clear();
        for (std::size_t k = 0; k < c; ++k) d.label_names.push_back("c" + std::to_string(k));
        TrainConfig cfg;
        cfg.max_steps = 1;
        const auto r = train_classifier(m, d, nullptr, cfg);
        CHECK(std::abs(r.history.at(0).loss - std::log(static_cast<double>(c))) <= 0.1 * std::log(static_cast<double>(c)));
    }
}

TEST_CASE("vanilla SLM separates a linearly separable toy within three epochs") {
    const auto train = separable_toy(512, 1);
    auto m = model::build_pifi(small_encoder(), small_pifi(false), nullptr, 2);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 16;
    cfg.seed = 4;
    train_classifier(m, train, nullptr, cfg);
    CHECK(evaluate_classification(m, train).metrics.at("accuracy") == 1.0);
}

TEST_CASE("frozen donor bytes survive training; a trainable donor moves") {
    const auto train = separable_toy(64, 2);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 16;
    cfg.epochs = 1;

    auto frozen = model::build_pifi(small_encoder(), small_pifi(true), nullptr, 3);
    const auto before = donor_hash(frozen);
    const auto r = train_classifier(frozen, train, nullptr, cfg);
    CHECK(donor_hash(frozen) == before);
    CHECK(r.frozen_hash_before == r.frozen_hash_after);

    auto full = model::build_pifi(small_encoder(), small_pifi(true, model::FreezePolicy::donor_trainable), nullptr, 3);
    CHECK(donor_hash(full) == before);
    cfg.max_steps = 1;
    train_classifier(full, train, nullptr, cfg);
    CHECK(donor_hash(full) != before);
}

TEST_CASE("training is deterministic and streams history") {
    const auto train = separable_toy(48, 3);
    const auto dev = separable_toy(16, 4);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 16;
    cfg.epochs = 2;
    cfg.seed = 8;
    std::ostringstream s1, s2;
    auto m1 = model::build_pifi(small_encoder(), small_pifi(true), nullptr, 3);
    auto m2 = model::build_pifi(small_encoder(), small_pifi(true), nullptr, 3);
    const auto r1 = train_classifier(m1, train, &dev, cfg, &s1);
    const auto r2 = train_classifier(m2, train, &dev, cfg, &s2);
    CHECK(s1.str() == s2.str());
    CHECK(params_hash(m1.named_params()) == params_hash(m2.named_params()));
    CHECK(r1.steps == 6);
    std::istringstream lines(s1.str());
    std::string line;
    std::size_t n = 0, with_metrics = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        ++n;
        with_metrics += !j["metrics"].empty();
        CHECK(j["step"] == n);
    }
    CHECK(n == 6);
    CHECK(with_metrics == 2);  // end of each epoch

    cfg.seed = 9;
    auto m3 = model::build_pifi(small_encoder(), small_pifi(true), nullptr, 3);
    train_classifier(m3, train, &dev, cfg);
    CHECK(params_hash(m3.named_params()) != params_hash(m1.named_params()));
}

TEST_CASE("a non-finite loss aborts with diagnostics") {
    ParamStore<double> store;
    auto params = scalar_param(store, 1.0);
    BatchLoss<double> loss = [&](Graph<double>& g, std::span<const std::size_t>, nn::ForwardContext&) {
        const auto w = g.param(store.at("w"), "w");
        return mul(w, g.constant(Tensor<double>(Shape{1}, {std::nan("")})));
    };
    TrainConfig cfg;
    try {
        train_loop(params, 4, loss, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        const std::string what = e.what();
        CHECK(what.find("step 1") != std::string::npos);
        CHECK(what.find("lr") != std::string::npos);
    }
}

TEST_CASE("train_loop respects max_steps and eval_every") {
    ParamStore<double> store;
    auto params = scalar_param(store, 1.0);
    BatchLoss<double> loss = [&](Graph<double>& g, std::span<const std::size_t>, nn::ForwardContext&) {
        const auto w = g.param(store.at("w"), "w");
        return sum(mul(w, w));
    };
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 5;
    cfg.eval_every = 3;
    cfg.max_steps = 7;
    std::size_t evals = 0;
    const auto r = train_loop(params, 6, loss, cfg, [&] {
        ++evals;
        return std::map<std::string, double>{{"x", 1.0}};
    });
    CHECK(r.steps == 7);
    // Steps 3, 6 (also epoch 2 end) and 7 (the last step).
    CHECK(evals == 3);
    CHECK(store.value("w")[0] < 1.0);
}

TEST_CASE("seq2seq training runs and evaluates generation") {
    const auto& vocab = data::synthetic_vocab();
    auto slm = model::desk_slm(model::SlmFamily::encoder_decoder, vocab.size());
    slm.n_layers = 1;
    slm.n_dec_layers = 1;
    slm.d_model = 32;
    slm.d_ffn = 64;
    auto pc = small_pifi(true);
    auto m = model::build_pifi(slm, pc, nullptr, 1);
    const auto train = data::gen_seq2seq(data::Seq2SeqKind::copy, 32, 1);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 1;
    const auto r = train_seq2seq(m, train, &train, vocab, cfg);
    CHECK(r.steps == 1);
    const auto& mt = r.history.back().metrics;
    for (const char* k : {"exact_match", "token_f1", "bleu", "rouge_l"}) {
        REQUIRE(mt.count(k) == 1);
        CHECK(mt.at(k) >= 0.0);
        CHECK(mt.at(k) <= 1.0);
    }
    auto cls = model::build_pifi(small_encoder(), small_pifi(false), nullptr, 1);
    CHECK_THROWS_AS(train_seq2seq(cls, train, nullptr, vocab, cfg), ConfigError);
}
