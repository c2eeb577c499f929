#pragma once

#include <string>
#include <vector>

#include "mfsr/field.hpp"
#include "mfsr/rng.hpp"
#include "mfsr/simulate.hpp"

namespace mfsr {

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
};

// A paired high/low-resolution sample of one simulation, plus the per-channel
// statistics of the HR data (the only legitimate normalization source) and
// enough provenance to regenerate it.
struct Dataset {
  Field4 hr;
  Field4 lr;
  std::vector<ChannelStats> stats;
  SimConfig sim;
  int d_t = 4;
  int d_s = 8;
};

// Strided subsampling: every d-th node starting at index 0, so LR node
// (i, j, k) sits at exactly the same physical point as HR node
// (i*d_t, j*d_s, k*d_s). Extents must divide.
Field4 downsample(const Field4& hr, int d_s, int d_t);

// Per-channel population statistics over all frames of a physical field.
std::vector<ChannelStats> channel_stats(const Field4& f);

// In-place standardization x -> (x - mean)/std per channel, and its inverse.
// Normalized and physical fields must not mix, so both directions check the
// field's flag.
void normalize_field(Field4& f, const std::vector<ChannelStats>& stats);
void denormalize_field(Field4& f, const std::vector<ChannelStats>& stats);

// Adds i.i.d. N(0, 1) to every element of an already-normalized field.
void add_gaussian_noise(Field4& f, Rng& rng);

// Simulate + downsample + HR statistics, in physical units.
Dataset make_dataset(const SimConfig& cfg, int d_t, int d_s);

// HR extents covered by the LR grid's bounding box: (n_lr - 1) * d + 1 per
// axis. The strided LR grid stops d - 1 HR nodes short of the field end, so
// reconstructions and ground truth are compared on this region.
std::array<int, 3> covered_extents(const Dataset& ds);

// MFSRDAT1 container: magic, JSON header, then f32 HR and LR blobs, each with
// a trailing CRC32. Round-trips bit-exactly for data that originated from
// f32 (i.e. any loaded dataset re-saves identically).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// MFSRFLD1 container for a single field (inference outputs, evaluation
// inputs): magic, JSON geometry header, f64 payload with a trailing CRC32.
// Bit-exact round trip.
void save_field(const Field4& f, const std::string& path);
Field4 load_field(const std::string& path);

}  // namespace mfsr
