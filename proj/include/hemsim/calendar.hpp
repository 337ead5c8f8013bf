#pragma once

#include <algorithm>

namespace hemsim {

/// Control step length in hours.
inline constexpr double kStepHours = 0.5;
inline constexpr int kStepsPerDay = 48;

/// Time of day in [0, 24) h at the start of control step k (k = 0 is Jan 1, 00:00).
inline double time_of_day(long step) { return static_cast<double>(step % kStepsPerDay) * kStepHours; }

/// Day of year in {1, ..., 365}; years wrap and day 366 never occurs.
inline int day_of_year(long step) { return static_cast<int>((step / kStepsPerDay) % 365) + 1; }

/// 0 = Monday ... 6 = Sunday, with day 1 a Friday.
inline int weekday(int doy) { return (std::clamp(doy, 1, 366) - 1 + 4) % 7; }

inline bool is_workday(int doy) { return weekday(doy) < 5; }

/// Occupied hours are 07:00-19:00 on workdays.
inline bool is_occupied(double tod, int doy) { return is_workday(doy) && tod >= 7.0 && tod < 19.0; }

}  // namespace hemsim
