#ifndef CORTICAL_IO_HPP
#define CORTICAL_IO_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace cortical::io {

// Shortest round-trip representation, locale independent.
std::string num(double v);

// Plain P2 image. values is row-major with row 0 at the top; affinely mapped so that the
// smallest value is 0 and the largest 255 (all zeros when the field is flat).
void write_pgm(std::ostream& os, int width, int height, const std::vector<double>& values);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace cortical::io

#endif
