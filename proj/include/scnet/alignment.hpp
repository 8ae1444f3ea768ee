#pragma once

#include <vector>

#include "scnet/common.hpp"
#include "scnet/mask.hpp"
#include "scnet/protogen.hpp"
#include "scnet/rng.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

enum class Branch { kClassSpecific, kClassAgnostic };

/// One comparison input for the shared convolution module: prototype channels
/// stacked over query-feature channels, plus the branch's supervision mask.
struct AlignedInput {
  Tensor fused;  // [h,w,2c]
  BinaryMask supervision;
  Branch branch = Branch::kClassSpecific;
};

/// Copies a prototype to every spatial location; backward sums the spatial
/// gradients back into the prototype.
inline Tensor expand_fg(Tape& tape, const Prototype& prototype, int h, int w) {
  const int c = prototype.channels();
  Tensor out = Tensor::zeros({h, w, c});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) out.at3(i, j, k) = prototype.values.at(k);
  if (detail::track_inputs({&prototype.values})) {
    Tensor p_t = prototype.values, out_t = out;
    p_t.ensure_grad();
    out_t.set_requires_grad(true);
    tape.record("expand_fg", [p_t, out_t, h, w, c]() mutable {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          for (int k = 0; k < c; ++k)
            p_t.grad()[k] += out_t.grad()[(static_cast<std::size_t>(i) * w + j) * c + k];
    });
  }
  return out;
}

/// Region-wise prototype expansion. Every background pixel receives the
/// prototype of its own region; every foreground pixel receives a single
/// prototype drawn uniformly once per call from `rng`. Region masks may
/// overlap the foreground (the foreground draw wins there), but each
/// non-foreground pixel must be covered by exactly one region.
inline Tensor expand_bg(Tape& tape, const std::vector<Prototype>& prototypes,
                        const std::vector<BinaryMask>& masks, const BinaryMask& fg_mask, Rng& rng) {
  if (prototypes.empty()) throw NoBackgroundError("expand_bg: no background prototypes");
  if (prototypes.size() != masks.size())
    throw ShapeError("expand_bg: prototype/mask lists are not aligned");
  const int h = fg_mask.height(), w = fg_mask.width();
  const int c = prototypes.front().channels();
  for (const auto& p : prototypes)
    if (p.channels() != c) throw ShapeError("expand_bg: prototype widths differ");
  for (const auto& m : masks) check_same_shape(m, fg_mask, "expand_bg");

  // one seeded draw per call, shared by the whole foreground region
  const int picked = static_cast<int>(rng.uniform_int(prototypes.size()));

  // per-pixel prototype selection
  std::vector<int> sel(static_cast<std::size_t>(h) * w, -1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const std::size_t off = static_cast<std::size_t>(i) * w + j;
      if (fg_mask.at(i, j)) {
        sel[off] = picked;
        continue;
      }
      for (std::size_t k = 0; k < masks.size(); ++k)
        if (masks[k].at(i, j)) {
          if (sel[off] != -1) throw ShapeError("expand_bg: region masks overlap");
          sel[off] = static_cast<int>(k);
        }
      if (sel[off] == -1) throw ShapeError("expand_bg: pixel not covered by any region");
    }

  Tensor out = Tensor::zeros({h, w, c});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const Tensor& v = prototypes[sel[static_cast<std::size_t>(i) * w + j]].values;
      for (int k = 0; k < c; ++k) out.at3(i, j, k) = v.at(k);
    }

  bool tracked = false;
  for (const auto& p : prototypes)
    if (p.values.requires_grad() || p.values.has_grad()) tracked = true;
  if (tracked) {
    std::vector<Tensor> protos;
    protos.reserve(prototypes.size());
    for (const auto& p : prototypes) {
      Tensor v = p.values;
      v.ensure_grad();
      protos.push_back(v);
    }
    Tensor out_t = out;
    out_t.set_requires_grad(true);
    tape.record("expand_bg", [protos, out_t, sel, h, w, c]() mutable {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const std::size_t off = static_cast<std::size_t>(i) * w + j;
          auto& g = protos[sel[off]].grad();
          for (int k = 0; k < c; ++k) g[k] += out_t.grad()[off * c + k];
        }
    });
  }
  return out;
}

/// Fuses an expanded prototype map with the query features and attaches the
/// branch supervision: the query mask for the class-specific branch, its
/// complement for the class-agnostic one.
inline AlignedInput build_pair(Tape& tape, const Tensor& expanded, const Tensor& query_features,
                               const BinaryMask& supervision, Branch branch) {
  if (expanded.rank() != 3 || query_features.rank() != 3)
    throw ShapeError("build_pair: inputs must be rank 3");
  if (expanded.shape() != query_features.shape())
    throw ShapeError("build_pair: expanded/query shapes differ");
  if (supervision.height() != expanded.dim(0) || supervision.width() != expanded.dim(1))
    throw ShapeError("build_pair: supervision shape mismatch");
  AlignedInput out;
  out.fused = concat_channels(tape, expanded, query_features);
  out.supervision = supervision;
  out.branch = branch;
  return out;
}

}  // namespace scnet
