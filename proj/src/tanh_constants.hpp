#pragma once

// Shared constants for the exp-based tanh used by both kernel backends.
// exp(r) on |r| <= log(2)/2 is the classic Cephes rational approximation
// e^r = 1 + 2*r*P(r^2) / (Q(r^2) - r*P(r^2)), then scaled by 2^k.
// Both backends must evaluate these with the same fma placement so their
// results agree bit for bit.

namespace wassflow::kern::detail {

inline constexpr double kLog2E = 1.4426950408889634073599;
inline constexpr double kC1 = 6.93145751953125e-1;           // log(2) high part
inline constexpr double kC2 = 1.42860682030941723212e-6;     // log(2) low part

inline constexpr double kExpP0 = 1.26177193074810590878e-4;
inline constexpr double kExpP1 = 3.02994407707441961300e-2;
inline constexpr double kExpP2 = 9.99999999999999999910e-1;

inline constexpr double kExpQ0 = 3.00198505138664455042e-6;
inline constexpr double kExpQ1 = 2.52448340349684104192e-3;
inline constexpr double kExpQ2 = 2.27265548208155028766e-1;
inline constexpr double kExpQ3 = 2.00000000000000000005e0;

// |x| below this: odd Taylor series; above kSatCut: tanh == +/-1 in double.
inline constexpr double kTinyCut = 1.0e-4;
inline constexpr double kSatCut = 19.0625;

inline constexpr double kTaylor3 = -1.0 / 3.0;
inline constexpr double kTaylor5 = 2.0 / 15.0;

}  // namespace wassflow::kern::detail
