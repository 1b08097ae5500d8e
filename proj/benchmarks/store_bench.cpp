// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <filesystem>

#include "deltaforge/rng.hpp"
#include "deltaforge/tensor_store.hpp"

namespace {

using namespace deltaforge;

std::filesystem::path bench_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

Checkpoint payload_checkpoint(int64_t tensors, int64_t elements) {
  Rng rng(7);
  Checkpoint ckpt;
  std::vector<float> values(static_cast<size_t>(elements));
  for (int64_t t = 0; t < tensors; ++t) {
    for (auto& v : values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    ckpt.add("t" + std::to_string(t), Tensor::from_f32(values, {elements}));
  }
  return ckpt;
}

void BM_WriteCheckpoint(benchmark::State& state) {
  const Checkpoint ckpt = payload_checkpoint(state.range(0), 1 << 16);
  const auto path = bench_file("bench_write.st");
  for (auto _ : state) save_checkpoint(ckpt, path);
  state.SetBytesProcessed(state.iterations() * state.range(0) * (1 << 16) * 4);
  std::filesystem::remove(path);
}
BENCHMARK(BM_WriteCheckpoint)->Arg(4)->Arg(32);

void BM_OpenHeaderOnly(benchmark::State& state) {
  const Checkpoint ckpt = payload_checkpoint(64, 1 << 16);
  const auto path = bench_file("bench_open.st");
  save_checkpoint(ckpt, path);
  for (auto _ : state) {
    CheckpointHandle handle = open_checkpoint(path);
    benchmark::DoNotOptimize(handle);
  }
  std::filesystem::remove(path);
}
BENCHMARK(BM_OpenHeaderOnly);

void BM_LoadTensor(benchmark::State& state) {
  const Checkpoint ckpt = payload_checkpoint(8, 1 << 18);
  const auto path = bench_file("bench_load.st");
  save_checkpoint(ckpt, path);
  const CheckpointHandle handle = open_checkpoint(path);
  for (auto _ : state) {
    Tensor t = handle.load("t3");
    benchmark::DoNotOptimize(t);
  }
  state.SetBytesProcessed(state.iterations() * (1 << 18) * 4);
  std::filesystem::remove(path);
}
BENCHMARK(BM_LoadTensor);

void BM_ValidateFormat(benchmark::State& state) {
  const Checkpoint ckpt = payload_checkpoint(64, 1 << 12);
  const auto path = bench_file("bench_validate.st");
  save_checkpoint(ckpt, path);
  for (auto _ : state) {
    FormatReport report = validate_format(path);
    benchmark::DoNotOptimize(report);
  }
  std::filesystem::remove(path);
}
BENCHMARK(BM_ValidateFormat);

}  // namespace
