#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dualseg/data_pipeline.hpp"
#include "dualseg/error.hpp"

namespace dualseg {

void PhantomSpec::validate() const {
  const auto [rmin, rmax] = lesion_radius_range;
  if (n_patients < 1) throw Error(Errc::InvalidSpec, "n_patients must be >= 1");
  if (dims.d < 1 || dims.h < 1 || dims.w < 1) throw Error(Errc::InvalidSpec, "dims must be positive");
  if (rmin < 1 || rmax < rmin) throw Error(Errc::InvalidSpec, "lesion_radius_range must satisfy 1 <= min <= max");
  const int smallest = std::min({dims.d, dims.h, dims.w});
  if (2 * rmax + 1 > smallest) {
    throw Error(Errc::InvalidSpec, "lesion radius " + std::to_string(rmax) + " does not fit inside a volume with smallest side " +
                                       std::to_string(smallest));
  }
  if (!(complementarity >= 0.0 && complementarity <= 1.0)) throw Error(Errc::InvalidSpec, "complementarity must lie in [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw Error(Errc::InvalidSpec, "noise_sigma must be >= 0");
}

double phantom_contrast(const PhantomSpec& spec) { return std::max(1.0, 3.0 * spec.noise_sigma); }

std::vector<Phantom> generate_phantom_detailed(const PhantomSpec& spec) {
  spec.validate();
  const double contrast = phantom_contrast(spec);
  const double two_pi = 2.0 * std::numbers::pi;
  const auto [D, H, W] = spec.dims;

  std::vector<Phantom> out;
  out.reserve(spec.n_patients);
  for (int p = 0; p < spec.n_patients; ++p) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(p)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> radius(spec.lesion_radius_range.first, spec.lesion_radius_range.second);
    std::normal_distribution<double> noise(0.0, 1.0);

    // Smooth background: two low-frequency plane waves per modality.
    struct Wave {
      double fz, fy, fx, phase, amp;
    };
    auto draw_waves = [&] {
      std::array<Wave, 2> waves{};
      for (Wave& w : waves) w = {0.5 + unit(rng), 0.5 + unit(rng), 0.5 + unit(rng), two_pi * unit(rng), 0.3};
      return waves;
    };
    const auto waves_a = draw_waves();
    const auto waves_b = draw_waves();

    const int rz = radius(rng), ry = radius(rng), rx = radius(rng);
    const int cz = std::uniform_int_distribution<int>(rz, D - 1 - rz)(rng);
    const int cy = std::uniform_int_distribution<int>(ry, H - 1 - ry)(rng);
    const int cx = std::uniform_int_distribution<int>(rx, W - 1 - rx)(rng);
    const double wedge_phase = unit(rng);

    Phantom ph;
    MultiModalVolume& v = ph.volume;
    v.patient_id = "P" + std::string(p < 10 ? "00" : (p < 100 ? "0" : "")) + std::to_string(p);
    v.modality_a = Volume(spec.dims);
    v.modality_b = Volume(spec.dims);
    v.label = LabelVolume(spec.dims);
    ph.visibility = Grid3<LesionVisibility>(spec.dims, LesionVisibility::None);

    const double half_c = spec.complementarity / 2.0;
    for (int z = 0; z < D; ++z) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          auto background = [&](const std::array<Wave, 2>& waves) {
            double s = 0.0;
            for (const Wave& w : waves) {
              s += w.amp * std::sin(two_pi * (w.fz * z / D + w.fy * y / H + w.fx * x / W) + w.phase);
            }
            return s;
          };
          double a = background(waves_a);
          double b = background(waves_b);

          const double dz = static_cast<double>(z - cz) / rz;
          const double dy = static_cast<double>(y - cy) / ry;
          const double dx = static_cast<double>(x - cx) / rx;
          if (dz * dz + dy * dy + dx * dx <= 1.0) {
            // Angular wedges around the lesion axis decide which modality shows it.
            double u = (std::atan2(static_cast<double>(y - cy), static_cast<double>(x - cx)) + std::numbers::pi) / two_pi;
            u = std::fmod(u + wedge_phase, 1.0);
            LesionVisibility vis = LesionVisibility::Both;
            if (u < half_c) {
              vis = LesionVisibility::OnlyA;
            } else if (u < 2.0 * half_c) {
              vis = LesionVisibility::OnlyB;
            }
            if (vis == LesionVisibility::OnlyA || vis == LesionVisibility::Both) a += contrast;
            if (vis == LesionVisibility::OnlyB || vis == LesionVisibility::Both) b -= contrast;
            v.label->at(z, y, x) = 1;
            ph.visibility.at(z, y, x) = vis;
          }
          a += spec.noise_sigma * noise(rng);
          b += spec.noise_sigma * noise(rng);
          v.modality_a.at(z, y, x) = static_cast<float>(a);
          v.modality_b.at(z, y, x) = static_cast<float>(b);
        }
      }
    }
    out.push_back(std::move(ph));
  }
  return out;
}

std::vector<MultiModalVolume> generate_phantom(const PhantomSpec& spec) {
  std::vector<MultiModalVolume> out;
  for (Phantom& p : generate_phantom_detailed(spec)) out.push_back(std::move(p.volume));
  return out;
}

}  // namespace dualseg
