#include <benchmark/benchmark.h>

#include "vclip/corpus.hpp"
#include "vclip/encoder.hpp"
#include "vclip/numerics/kernels.hpp"
#include "vclip/numerics/ops.hpp"
#include "vclip/objective.hpp"
#include "vclip/retrieval.hpp"
#include "vclip/sampler.hpp"
#include "vclip/trainer.hpp"

namespace {

using namespace vclip;

Tensor<float> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t = Tensor<float>::matrix(r, c);
  for (auto& x : t.values()) x = static_cast<float>(rng.normal());
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_matrix(m, k, 1);
  const auto b = random_matrix(k, n, 2);
  Tensor<float> c = Tensor<float>::matrix(m, n);
  for (auto _ : state) {
    kernels::gemm<float>(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(m * n * k),
                                                 benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Args({4096, 64, 64})->Args({4096, 64, 256})->Args({4096, 256, 64});

void BM_SegmentAttention(benchmark::State& state) {
  const auto seq = static_cast<std::size_t>(state.range(0));
  const std::size_t n_seq = 128, d = 64;
  std::vector<RowRange> segs;
  for (std::size_t i = 0; i < n_seq; ++i) segs.push_back({i * seq, seq});
  const auto q = random_matrix(seq * n_seq, d, 3);
  const auto k = random_matrix(seq * n_seq, d, 4);
  const auto v = random_matrix(seq * n_seq, d, 5);
  for (auto _ : state) {
    Graph<float> g;
    Var qv = g.leaf(q, true), kv = g.leaf(k, true), vv = g.leaf(v, true);
    Var out = ops::segment_attention(g, qv, kv, vv, 4, segs);
    g.backward(ops::sum(g, out));
    benchmark::DoNotOptimize(g.grad(qv).data());
  }
}
BENCHMARK(BM_SegmentAttention)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

struct Fixture {
  GeneratedCorpus gen = generate_corpus(CorpusConfig{});
  TrainConfig config = [] {
    TrainConfig c;
    return c;
  }();
  EncoderParams<float> params = EncoderParams<float>::init(config.encoder, 0);
  std::vector<ClipPair> pairs;

  Fixture() {
    Rng rng(7);
    VideoCluster cluster;
    for (std::size_t v = 0; v < config.retrieval.k; ++v) cluster.videos.push_back(v);
    pairs = assemble_batch(cluster, gen.corpus, config.sampler, rng);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_EncodeBatchForward(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    Graph<float> g;
    auto vars = bind_params(g, f.params, false);
    auto enc = encode_pairs(g, f.params, vars, f.gen.corpus, f.pairs);
    benchmark::DoNotOptimize(g.value(enc.text).data());
  }
  state.counters["pairs"] = double(f.pairs.size());
}
BENCHMARK(BM_EncodeBatchForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto& f = fixture();
  auto params = f.params;
  auto adam = AdamState<float>::init(f.config.adam, params.tensors);
  for (auto _ : state) {
    Graph<float> g;
    auto vars = bind_params(g, params, true);
    auto enc = encode_pairs(g, params, vars, f.gen.corpus, f.pairs);
    auto nce = info_nce(g, similarity(g, enc.video, enc.text, ObjectiveConfig{}), 1.0);
    g.backward(nce.total);
    std::vector<Tensor<float>> grads;
    for (Var v : vars) grads.push_back(g.grad(v));
    adam_step<float>(params.tensors, grads, params.names, adam);
  }
  state.counters["pairs"] = double(f.pairs.size());
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Knn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
  const DenseIndex index(random_matrix(n, 64, 9), ids);
  const auto q = random_matrix(1, 64, 10);
  for (auto _ : state) benchmark::DoNotOptimize(knn(index, q.row(0), 16));
}
BENCHMARK(BM_Knn)->Arg(1000)->Arg(10000);

}  // namespace
BENCHMARK_MAIN();
