#pragma once

#include <cstdint>
#include <string>

namespace airpcm {

// Seconds since 1970-01-01T00:00:00Z.
using UnixSeconds = std::int64_t;

// Parses `YYYY-MM-DDTHH:MM:SSZ` (also accepts a space separator and a
// missing `Z`). Throws DataError on anything else.
UnixSeconds parse_iso8601(const std::string& text);
std::string format_iso8601(UnixSeconds t);

struct CivilTime {
  int year = 1970;
  unsigned month = 1;  // 1..12
  unsigned day = 1;    // 1..31
  unsigned hour = 0;   // 0..23
};

CivilTime to_civil(UnixSeconds t);

inline UnixSeconds hours_to_seconds(double hours) {
  return static_cast<UnixSeconds>(hours * 3600.0 + (hours >= 0 ? 0.5 : -0.5));
}

}  // namespace airpcm
