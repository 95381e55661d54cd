#pragma once

#include <stdexcept>

#include "vdm/signal.hpp"

namespace vdm {

/// Complex masks for the coherent and diffuse branches, both T x F.
struct MaskPair {
  ComplexSpectrogram coh;
  ComplexSpectrogram diff;
};

struct MaskedEstimates {
  ComplexSpectrogram coh;
  ComplexSpectrogram diff;
  ComplexSpectrogram vdm;
};

/// Both masks act on the same reference spectrogram; the VDM estimate is
/// coh + beta * diff.
inline MaskedEstimates apply_and_combine(const MaskPair& m, const ComplexSpectrogram& y_ref, double beta) {
  if (!m.coh.same_shape(y_ref) || !m.diff.same_shape(y_ref)) throw std::invalid_argument("apply_and_combine: shape mismatch");
  MaskedEstimates e{ComplexSpectrogram::zeros_like(y_ref), ComplexSpectrogram::zeros_like(y_ref),
                    ComplexSpectrogram::zeros_like(y_ref)};
  for (std::size_t i = 0; i < y_ref.data.size(); ++i) {
    e.coh.data[i] = m.coh.data[i] * y_ref.data[i];
    e.diff.data[i] = m.diff.data[i] * y_ref.data[i];
    e.vdm.data[i] = e.coh.data[i] + beta * e.diff.data[i];
  }
  return e;
}

}  // namespace vdm
