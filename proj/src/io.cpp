#include "dcav/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dcav::io {

namespace {

std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

struct Field {
    std::string text;
    std::size_t column;  // 1-based character position
};

std::vector<Field> split(const std::string& line)
{
    std::vector<Field> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        const std::size_t end = comma == std::string::npos ? line.size() : comma;
        out.push_back({trim(std::string_view(line).substr(start, end - start)), start + 1});
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

double meta_number(const CsvTable& t, const std::string& key)
{
    const auto it = t.metadata.find(key);
    if (it == t.metadata.end()) throw FormatError(t.file, 1, 1, "missing metadata '# " + key + "='");
    double v = 0.0;
    const auto* end = it->second.data() + it->second.size();
    const auto [p, ec] = std::from_chars(it->second.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v))
        throw FormatError(t.file, 1, 1, "metadata '" + key + "' is not a finite number: '" + it->second + "'");
    return v;
}

std::size_t as_count(const CsvTable& t, const std::string& key)
{
    const double v = meta_number(t, key);
    if (!(v >= 1.0) || v != std::floor(v)) throw FormatError(t.file, 1, 1, "metadata '" + key + "' must be a positive integer");
    return static_cast<std::size_t>(v);
}

const std::vector<std::string> kHeightHeader{"x_um", "y_um", "height_um"};
const std::vector<std::string> kFinesseHeader{"x_um", "y_um", "finesse", "linewidth_ghz", "splitting_ghz", "transmission", "valid"};
const std::vector<std::string> kTraceHeader{"time_s", "voltage_v"};
const std::vector<std::string> kSpectraHeader{"length_step", "wavelength_nm", "intensity"};
const std::vector<std::string> kPleHeader{"scan_id", "freq_mhz", "counts"};
const std::vector<std::string> kLengthHeader{"length_um", "finesse"};
const std::vector<std::string> kSampleHeader{"x_um", "y_um", "thickness_um", "finesse"};

Metadata grid_metadata(const GridGeometry& g)
{
    return {{"origin_x_um", format_number(g.origin_x_um)},
            {"origin_y_um", format_number(g.origin_y_um)},
            {"pitch_um", format_number(g.pitch_um)},
            {"nx", std::to_string(g.nx)},
            {"ny", std::to_string(g.ny)}};
}

// Grid from metadata when present, else inferred from row-major coordinates.
// Every row must sit on its grid node in iy-major order.
GridGeometry read_grid(const CsvTable& t)
{
    GridGeometry g;
    if (t.rows.empty()) throw FormatError(t.file, 1, 1, "no data rows");
    if (t.metadata.count("pitch_um")) {
        g.origin_x_um = meta_number(t, "origin_x_um");
        g.origin_y_um = meta_number(t, "origin_y_um");
        g.pitch_um = meta_number(t, "pitch_um");
        g.nx = as_count(t, "nx");
        g.ny = as_count(t, "ny");
    } else {
        g.origin_x_um = t.rows[0][0];
        g.origin_y_um = t.rows[0][1];
        std::size_t nx = 1;
        while (nx < t.rows.size() && t.rows[nx][1] == t.rows[0][1]) ++nx;
        g.nx = nx;
        g.ny = t.rows.size() / nx;
        if (nx > 1) g.pitch_um = (t.rows[nx - 1][0] - g.origin_x_um) / static_cast<double>(nx - 1);
        else if (t.rows.size() > 1) g.pitch_um = t.rows[1][1] - g.origin_y_um;
        else g.pitch_um = 1.0;
    }
    if (!(g.pitch_um > 0.0)) throw FormatError(t.file, 1, 1, "grid pitch must be positive");
    if (t.rows.size() != g.nx * g.ny) {
        std::ostringstream os;
        os << "expected " << g.nx << " x " << g.ny << " = " << g.nx * g.ny << " grid rows, found " << t.rows.size();
        throw FormatError(t.file, t.row_line.back(), 1, os.str());
    }
    const double tol = 1e-6 * g.pitch_um;
    for (std::size_t iy = 0; iy < g.ny; ++iy)
        for (std::size_t ix = 0; ix < g.nx; ++ix) {
            const std::size_t k = g.index(ix, iy);
            if (std::abs(t.rows[k][0] - g.x(ix)) > tol)
                throw FormatError(t.file, t.row_line[k], 1, "x_um off the grid or rows not in row-major order");
            if (std::abs(t.rows[k][1] - g.y(iy)) > tol)
                throw FormatError(t.file, t.row_line[k], 1, "y_um off the grid or rows not in row-major order");
        }
    return g;
}

std::vector<double> parse_list(const CsvTable& t, const std::string& key)
{
    std::vector<double> out;
    const auto it = t.metadata.find(key);
    if (it == t.metadata.end() || it->second.empty()) return out;
    std::size_t start = 0;
    const std::string& s = it->second;
    while (start <= s.size()) {
        const std::size_t semi = std::min(s.find(';', start), s.size());
        double v = 0.0;
        const auto [p, ec] = std::from_chars(s.data() + start, s.data() + semi, v);
        if (ec != std::errc() || p != s.data() + semi) throw FormatError(t.file, 1, 1, "bad number list in metadata '" + key + "'");
        out.push_back(v);
        start = semi + 1;
    }
    return out;
}

}  // namespace

FormatError::FormatError(const std::string& f, std::size_t l, std::size_t c, const std::string& message)
    : std::runtime_error(f + ":" + std::to_string(l) + ":" + std::to_string(c) + ": " + message), file(f), line(l), column(c)
{
}

std::string format_number(double value)
{
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc()) throw std::runtime_error("number formatting failed");
    return std::string(buf, p);
}

std::size_t CsvTable::column(const std::string& name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw FormatError(file, 1, 1, "missing column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected)
{
    CsvTable t;
    t.file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(t.file, 0, 0, "cannot open file");

    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string s = trim(line);
        if (s.empty()) continue;
        if (!have_header && s[0] == '#') {
            const std::string body = trim(std::string_view(s).substr(1));
            const std::size_t eq = body.find('=');
            if (eq != std::string::npos) t.metadata[trim(std::string_view(body).substr(0, eq))] = trim(std::string_view(body).substr(eq + 1));
            continue;
        }
        const auto fields = split(s);
        if (!have_header) {
            for (const auto& f : fields) t.header.push_back(f.text);
            if (t.header != expected)
                throw FormatError(t.file, line_no, 1, "header '" + join(t.header) + "' does not match '" + join(expected) + "'");
            have_header = true;
            continue;
        }
        if (fields.size() != expected.size()) {
            std::ostringstream os;
            os << "expected " << expected.size() << " fields, found " << fields.size();
            throw FormatError(t.file, line_no, fields.back().column, os.str());
        }
        std::vector<double> row(fields.size());
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const auto& f = fields[i].text;
            const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), row[i]);
            if (f.empty() || ec != std::errc() || p != f.data() + f.size() || !std::isfinite(row[i]))
                throw FormatError(t.file, line_no, fields[i].column,
                                  "column '" + expected[i] + "': '" + f + "' is not a finite number");
        }
        t.rows.push_back(std::move(row));
        t.row_line.push_back(line_no);
    }
    if (!have_header) throw FormatError(t.file, line_no, 1, "missing header '" + join(expected) + "'");
    return t;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows, const Metadata& metadata)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
    out << join(header) << '\n';
    std::string line;
    for (const auto& row : rows) {
        line.clear();
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) line += ',';
            line += format_number(row[i]);
        }
        line += '\n';
        out << line;
    }
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

HeightMap read_heightmap(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kHeightHeader);
    HeightMap m;
    m.grid = read_grid(t);
    m.thickness_um.reserve(t.rows.size());
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        if (t.rows[k][2] < 0.0) throw FormatError(t.file, t.row_line[k], 1, "height_um must be >= 0");
        m.thickness_um.push_back(t.rows[k][2]);
    }
    if (auto it = t.metadata.find("frame"); it != t.metadata.end()) m.frame = it->second;
    return m;
}

void write_heightmap(const std::filesystem::path& path, const HeightMap& m)
{
    m.grid.validate();
    std::vector<std::vector<double>> rows;
    rows.reserve(m.grid.size());
    for (std::size_t iy = 0; iy < m.grid.ny; ++iy)
        for (std::size_t ix = 0; ix < m.grid.nx; ++ix) rows.push_back({m.grid.x(ix), m.grid.y(iy), m.at(ix, iy)});
    auto meta = grid_metadata(m.grid);
    if (!m.frame.empty()) meta["frame"] = m.frame;
    write_csv(path, kHeightHeader, rows, meta);
}

FinesseMap read_finesse_map(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kFinesseHeader);
    FinesseMap m;
    m.grid = read_grid(t);
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        const auto& r = t.rows[k];
        if (r[6] != 0.0 && r[6] != 1.0) throw FormatError(t.file, t.row_line[k], 1, "valid must be 0 or 1");
        FinessePixel px{r[2], r[3], r[4], r[5], r[6] == 1.0};
        if (px.valid && !(px.finesse > 0.0)) throw FormatError(t.file, t.row_line[k], 1, "valid pixel needs finesse > 0");
        m.pixels.push_back(px);
    }
    return m;
}

void write_finesse_map(const std::filesystem::path& path, const FinesseMap& m)
{
    m.grid.validate();
    std::vector<std::vector<double>> rows;
    rows.reserve(m.grid.size());
    for (std::size_t iy = 0; iy < m.grid.ny; ++iy)
        for (std::size_t ix = 0; ix < m.grid.nx; ++ix) {
            const auto& p = m.at(ix, iy);
            rows.push_back({m.grid.x(ix), m.grid.y(iy), p.finesse, p.linewidth_ghz, p.splitting_ghz, p.transmission,
                            p.valid ? 1.0 : 0.0});
        }
    write_csv(path, kFinesseHeader, rows, grid_metadata(m.grid));
}

synth::TransmissionTrace read_trace(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kTraceHeader);
    if (t.rows.size() < 2) throw FormatError(t.file, t.row_line.empty() ? 1 : t.row_line.back(), 1, "trace needs at least 2 samples");
    synth::TransmissionTrace tr;
    tr.sweep_hz = meta_number(t, "sweep_hz");
    tr.sweep_amplitude_v = t.metadata.count("sweep_amplitude_v") ? meta_number(t, "sweep_amplitude_v") : 0.0;
    tr.sweep_start_s = t.metadata.count("sweep_start_s") ? meta_number(t, "sweep_start_s") : 0.0;
    if (!(tr.sweep_hz > 0.0)) throw FormatError(t.file, 1, 1, "sweep_hz must be positive");
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        if (k > 0 && !(t.rows[k][0] > t.rows[k - 1][0]))
            throw FormatError(t.file, t.row_line[k], 1, "time_s is not strictly increasing");
        tr.time_s.push_back(t.rows[k][0]);
        tr.voltage_v.push_back(t.rows[k][1]);
    }
    return tr;
}

void write_trace(const std::filesystem::path& path, const synth::TransmissionTrace& tr)
{
    std::vector<std::vector<double>> rows;
    rows.reserve(tr.time_s.size());
    for (std::size_t i = 0; i < tr.time_s.size(); ++i) rows.push_back({tr.time_s[i], tr.voltage_v[i]});
    write_csv(path, kTraceHeader, rows,
              {{"sweep_hz", format_number(tr.sweep_hz)},
               {"sweep_amplitude_v", format_number(tr.sweep_amplitude_v)},
               {"sweep_start_s", format_number(tr.sweep_start_s)}});
}

synth::DispersionSpectra read_spectra(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kSpectraHeader);
    synth::DispersionSpectra sp;
    std::size_t k = 0;
    while (k < t.rows.size()) {
        const double label = t.rows[k][0];
        if (label != std::floor(label) || std::abs(label) > 1e9)
            throw FormatError(t.file, t.row_line[k], 1, "length_step must be an integer");
        for (int seen : sp.step_label)
            if (seen == static_cast<int>(label))
                throw FormatError(t.file, t.row_line[k], 1, "length_step rows must be contiguous per step");
        const std::size_t begin = k;
        while (k < t.rows.size() && t.rows[k][0] == label) ++k;
        std::vector<double> axis;
        for (std::size_t i = begin; i < k; ++i) {
            if (i > begin && !(t.rows[i][1] > t.rows[i - 1][1]))
                throw FormatError(t.file, t.row_line[i], 1, "wavelength_nm is not strictly increasing within a step");
            axis.push_back(t.rows[i][1]);
        }
        if (sp.step_label.empty()) sp.wavelength_nm = axis;
        else if (axis != sp.wavelength_nm)
            throw FormatError(t.file, t.row_line[begin], 1, "every step must share the wavelength axis of the first");
        sp.step_label.push_back(static_cast<int>(label));
        for (std::size_t i = begin; i < k; ++i) sp.intensity.push_back(t.rows[i][2]);
    }
    sp.air_gap_nm = parse_list(t, "air_gap_nm");
    if (!sp.air_gap_nm.empty() && sp.air_gap_nm.size() != sp.step_label.size())
        throw FormatError(t.file, 1, 1, "air_gap_nm metadata does not match the step count");
    return sp;
}

void write_spectra(const std::filesystem::path& path, const synth::DispersionSpectra& sp)
{
    const std::size_t nw = sp.wavelength_nm.size();
    std::vector<std::vector<double>> rows;
    rows.reserve(sp.intensity.size());
    for (std::size_t s = 0; s < sp.step_label.size(); ++s)
        for (std::size_t i = 0; i < nw; ++i) rows.push_back({static_cast<double>(sp.step_label[s]), sp.wavelength_nm[i], sp.at(s, i)});
    Metadata meta;
    if (!sp.air_gap_nm.empty()) {
        std::string list;
        for (std::size_t i = 0; i < sp.air_gap_nm.size(); ++i) list += (i ? ";" : "") + format_number(sp.air_gap_nm[i]);
        meta["air_gap_nm"] = list;
    }
    write_csv(path, kSpectraHeader, rows, meta);
}

synth::PleScanSet read_ple(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kPleHeader);
    synth::PleScanSet set;
    if (auto it = t.metadata.find("emitter"); it != t.metadata.end()) {
        if (it->second == "snv") set.emitter = synth::Emitter::snv;
        else if (it->second == "nv") set.emitter = synth::Emitter::nv;
        else throw FormatError(t.file, 1, 1, "emitter must be 'snv' or 'nv'");
    }
    if (auto it = t.metadata.find("repump"); it != t.metadata.end()) set.repump = it->second;
    std::vector<double> ids;
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        const double id = t.rows[k][0];
        if (id != std::floor(id) || id < 0.0) throw FormatError(t.file, t.row_line[k], 1, "scan_id must be a non-negative integer");
        if (ids.empty() || ids.back() != id) {
            for (double seen : ids)
                if (seen == id) throw FormatError(t.file, t.row_line[k], 1, "scan_id rows must be contiguous per scan");
            ids.push_back(id);
            set.scans.emplace_back();
        }
        auto& scan = set.scans.back();
        if (!scan.freq_mhz.empty() && !(t.rows[k][1] > scan.freq_mhz.back()))
            throw FormatError(t.file, t.row_line[k], 1, "freq_mhz is not strictly increasing within a scan");
        scan.freq_mhz.push_back(t.rows[k][1]);
        scan.counts.push_back(t.rows[k][2]);
    }
    return set;
}

void write_ple(const std::filesystem::path& path, const synth::PleScanSet& set)
{
    std::vector<std::vector<double>> rows;
    for (std::size_t s = 0; s < set.scans.size(); ++s)
        for (std::size_t i = 0; i < set.scans[s].freq_mhz.size(); ++i)
            rows.push_back({static_cast<double>(s), set.scans[s].freq_mhz[i], set.scans[s].counts[i]});
    Metadata meta{{"emitter", set.emitter == synth::Emitter::snv ? "snv" : "nv"}};
    if (!set.repump.empty()) meta["repump"] = set.repump;
    write_csv(path, kPleHeader, rows, meta);
}

std::vector<synth::LengthSweepPoint> read_length_sweep(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kLengthHeader);
    std::vector<synth::LengthSweepPoint> out;
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        if (!(t.rows[k][0] > 0.0)) throw FormatError(t.file, t.row_line[k], 1, "length_um must be positive");
        if (!(t.rows[k][1] > 0.0)) throw FormatError(t.file, t.row_line[k], 1, "finesse must be positive");
        out.push_back({t.rows[k][0], t.rows[k][1]});
    }
    return out;
}

void write_length_sweep(const std::filesystem::path& path, const std::vector<synth::LengthSweepPoint>& data)
{
    std::vector<std::vector<double>> rows;
    for (const auto& p : data) rows.push_back({p.length_um, p.finesse});
    write_csv(path, kLengthHeader, rows);
}

std::vector<modelfit::ThicknessFinesseSample> read_samples(const std::filesystem::path& path)
{
    const auto t = read_csv(path, kSampleHeader);
    std::vector<modelfit::ThicknessFinesseSample> out;
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        if (t.rows[k][2] < 0.0) throw FormatError(t.file, t.row_line[k], 1, "thickness_um must be >= 0");
        out.push_back({t.rows[k][2], t.rows[k][3], t.rows[k][0], t.rows[k][1], 1.0});
    }
    return out;
}

void write_samples(const std::filesystem::path& path, const std::vector<modelfit::ThicknessFinesseSample>& samples)
{
    std::vector<std::vector<double>> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) rows.push_back({s.x_um, s.y_um, s.thickness_um, s.finesse});
    write_csv(path, kSampleHeader, rows);
}

}  // namespace dcav::io
