#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bar/distill.hpp"
#include "bar/netgraph.hpp"

namespace bar {

/// One named tensor inside a checkpoint. Exactly one of `f32`/`u32` is
/// populated, selected by `dtype` (0 = f32, 1 = u32).
struct NamedArray {
    std::string name;
    std::uint8_t dtype = 0;
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;
    std::vector<std::uint32_t> u32;

    static NamedArray floats(std::string name, std::vector<std::uint32_t> dims,
                             std::vector<float> data);
    static NamedArray words(std::string name, std::vector<std::uint32_t> dims,
                            std::vector<std::uint32_t> data);

    [[nodiscard]] std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

/// Checkpoint container: magic "BARCKPT1", little-endian body (array count,
/// then per array: name length u16, name, dtype u8, rank u8, dims u32[],
/// raw data), trailing CRC32 over all preceding bytes. Names must be unique.
void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::string& path);

/// Teacher logits container: magic "BARLOGT1", u32 rows, u32 cols, f32 data,
/// trailing CRC32. Little-endian throughout.
void write_logits_cache(const std::string& path, const LogitsCache& cache);
LogitsCache read_logits_cache(const std::string& path);

// ===== model and pruned-graph schemas over the checkpoint container =====

/// Dense model: architecture under "spec", every parameter and running stat
/// as its own array, "kind" = [0].
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

/// Pruned graph: "kind" = [1]; folded weights/biases per conv plus the alive
/// index sets as u32 arrays; scatter maps are recomputed on load.
void save_pruned_graph(const std::string& path, const PrunedGraph& g);
PrunedGraph load_pruned_graph(const std::string& path);

/// Peeks at "kind" to route eval between the two schemas.
bool checkpoint_holds_pruned_graph(const std::string& path);

}  // namespace bar
