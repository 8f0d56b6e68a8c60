// CSV dataset formats. Numbers are written at 17 significant digits so that
// write followed by read reproduces every value bit for bit. Optional
// `# key=value` lines ahead of the header carry metadata.

#pragma once

#include "dcav/maps.hpp"
#include "dcav/modelfit.hpp"
#include "dcav/synth.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcav::io {

/// Schema or parse failure; what() starts with "file:line:column:".
struct FormatError : std::runtime_error {
    FormatError(const std::string& file, std::size_t line, std::size_t column, const std::string& message);
    std::string file;
    std::size_t line = 0;
    std::size_t column = 0;
};

using Metadata = std::map<std::string, std::string>;

/// Shortest text that reads back to the same double, at most 17 digits.
std::string format_number(double value);

struct CsvTable {
    std::string file;
    Metadata metadata;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> row_line;  // source line of each row

    std::size_t column(const std::string& name) const;  // throws FormatError
};

/// Reads a numeric CSV with the exact expected header.
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows, const Metadata& metadata = {});

HeightMap read_heightmap(const std::filesystem::path& path);
void write_heightmap(const std::filesystem::path& path, const HeightMap& map);

FinesseMap read_finesse_map(const std::filesystem::path& path);
void write_finesse_map(const std::filesystem::path& path, const FinesseMap& map);

synth::TransmissionTrace read_trace(const std::filesystem::path& path);
void write_trace(const std::filesystem::path& path, const synth::TransmissionTrace& trace);

synth::DispersionSpectra read_spectra(const std::filesystem::path& path);
void write_spectra(const std::filesystem::path& path, const synth::DispersionSpectra& spectra);

synth::PleScanSet read_ple(const std::filesystem::path& path);
void write_ple(const std::filesystem::path& path, const synth::PleScanSet& set);

std::vector<synth::LengthSweepPoint> read_length_sweep(const std::filesystem::path& path);
void write_length_sweep(const std::filesystem::path& path, const std::vector<synth::LengthSweepPoint>& data);

/// Registered samples: x_um,y_um,thickness_um,finesse.
std::vector<modelfit::ThicknessFinesseSample> read_samples(const std::filesystem::path& path);
void write_samples(const std::filesystem::path& path, const std::vector<modelfit::ThicknessFinesseSample>& samples);

}  // namespace dcav::io
