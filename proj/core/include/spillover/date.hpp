#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace spill {

// Calendar day stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(int days_since_epoch) : days_(days_since_epoch) {}

  // Parses YYYY-MM-DD; throws ValidationError on anything else.
  static Date parse(std::string_view text);
  static Date from_ymd(int year, unsigned month, unsigned day);

  std::string str() const;
  constexpr int days() const { return days_; }
  // 0 = Monday ... 6 = Sunday.
  int weekday() const;
  Date monday() const { return Date(days_ - weekday()); }
  constexpr Date plus_days(int n) const { return Date(days_ + n); }

  friend constexpr auto operator<=>(Date, Date) = default;

 private:
  int days_ = 0;
};

}  // namespace spill
