#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pgla/diffusion.hpp"
#include "pgla/layout.hpp"
#include "pgla/model.hpp"

namespace pgla {

/// Provenance stamped into every emitted artifact.
struct FileStamp {
    uint64_t seed = 0;
    uint64_t config_digest = 0;
};

/// Gradient container, magic "PGRD". Little-endian throughout:
///   magic, u32 version, u64 seed, u64 config digest,
///   u32 layer count, per layer { u32 name length, name bytes, u32 rank,
///   u32 dims[rank] }, u8 role, f32 payload.
/// Reload is bit-exact.
void write_gradient_file(const std::string& path, const GradientVector& g, const FileStamp& stamp);

struct GradientFileContents {
    GradientVector gradient;
    FileStamp stamp;
};

GradientFileContents read_gradient_file(const std::string& path);

/// Set of gradients sharing one layout, magic "PGRS": header then embedded
/// gradient records back to back.
void write_gradient_set(const std::string& path, const std::vector<GradientVector>& gs, const FileStamp& stamp);

struct GradientSetContents {
    std::vector<GradientVector> gradients;
    FileStamp stamp;
};

GradientSetContents read_gradient_set(const std::string& path);

/// Predictor checkpoint, magic "PGDM":
///   magic, u32 version, u64 seed, u64 config digest,
///   u32 grid side, u8 conditional, u32 hidden, u32 blocks, u32 time dim,
///   u32 T, f64 beta start, f64 beta end, u64 param count, f32 params.
void write_checkpoint(const std::string& path, const NoisePredictor& p, const FileStamp& stamp);

struct CheckpointContents {
    NoisePredictor predictor;
    FileStamp stamp;
};

CheckpointContents read_checkpoint(const std::string& path);

/// IDX ingestion (big-endian magic 0x803 images / 0x801 labels). Pixels are
/// scaled to [0,1]; labels validated against the class count. cap bounds the
/// number of samples kept (0 = all).
ProbeDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, uint32_t classes,
                              uint32_t cap);

/// One metrics row per (trial, stage). Unset fields serialize as empty cells.
struct MetricsRow {
    uint32_t trial = 0;
    std::string stage;
    std::optional<double> cos_g;
    std::optional<double> psnr_g;
    std::optional<double> psnr_i;
    std::optional<double> lra;
    std::optional<double> match_loss;
    std::optional<double> noise_scale_m;
    std::optional<int> t_prime;
    std::optional<double> c;
    uint64_t seed = 0;
    std::string config_digest;
};

extern const char* kMetricsCsvHeader;

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

/// write-temp + rename
void atomic_write_bytes(const std::string& path, const std::string& bytes);

std::string digest_hex(uint64_t digest);

} // namespace pgla
