#include "cs3d/profiler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace cs3d {

namespace {

std::string shape_cell(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.rank(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

std::string superscript(int e) {
  static const char* digits[] = {"⁰", "¹", "²", "³", "⁴", "⁵", "⁶", "⁷", "⁸", "⁹"};
  std::string out = e < 0 ? "⁻" : "";
  for (char c : std::to_string(std::abs(e))) out += digits[c - '0'];
  return out;
}

std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

}  // namespace

ProfileReport count_flops(const Model& m, const Shape& input_shape) {
  Shape s = input_shape;
  if (s.rank() == 4) s = Shape{1, s[0], s[1], s[2], s[3]};
  if (s.rank() != 5) throw ProfileError("input shape must be (C,T,H,W), got " + input_shape.str());
  const auto& want = m.config().input_shape;
  if (s[1] != want[0]) {
    throw ProfileError("input has " + std::to_string(s[1]) + " channels, model expects " +
                       std::to_string(want[0]));
  }
  ProfileReport r;
  r.model = m.config().name;
  r.input_shape = s;
  for (const auto& layer : m.layers()) {
    try {
      layer->describe(s, r.rows);
      s = layer->output_shape(s);
    } catch (const std::exception& e) {
      throw ProfileError("shape propagation failed at layer '" + layer->name() + "': " + e.what());
    }
  }
  for (const auto& row : r.rows) {
    r.total_params += row.params;
    r.total_flops += row.flops;
  }
  return r;
}

std::size_t count_params(const Model& m) { return m.parameter_count(); }

void ProfileReport::write_table(std::ostream& os) const {
  std::size_t wn = 5, wk = 4, ws = 9;
  for (const auto& r : rows) {
    wn = std::max(wn, r.name.size());
    wk = std::max(wk, r.kind.size());
    ws = std::max(ws, shape_cell(r.out_shape).size());
  }
  auto line = [&](const std::string& a, const std::string& b, const std::string& c,
                  const std::string& d, const std::string& e) {
    os << std::left << std::setw(static_cast<int>(wn)) << a << "  " << std::setw(static_cast<int>(wk))
       << b << "  " << std::setw(static_cast<int>(ws)) << c << "  " << std::right << std::setw(12)
       << d << "  " << std::setw(16) << e << '\n';
  };
  line("layer", "kind", "out_shape", "params", "flops");
  for (const auto& r : rows) {
    line(r.name, r.kind, shape_cell(r.out_shape), std::to_string(r.params), std::to_string(r.flops));
  }
  line("total", "", "", std::to_string(total_params), std::to_string(total_flops));
  os << '\n';
  os << "model:  " << model << "  input " << shape_cell(input_shape) << '\n';
  os << "params: " << total_params << " (" << fixed(static_cast<double>(total_params) / 1e6, 2)
     << " M)\n";
  os << "FLOPs:  " << fixed(flops_g(), 2) << " G\n";
  if (energy_j) {
    os << "energy: " << format_engineering(*energy_mj(), "mJ");
    if (!energy_source.empty()) os << " (" << energy_source << ")";
    os << '\n';
  }
}

void ProfileReport::write_csv(std::ostream& os) const {
  os << "layer,kind,out_shape,params,flops\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.kind << ',' << shape_cell(r.out_shape) << ',' << r.params << ','
       << r.flops << '\n';
  }
  os << "total,,," << total_params << ',' << total_flops << '\n';
}

void PowerTrace::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.t_s) || !std::isfinite(s.watts) || s.watts < 0.0) {
      throw ProfileError("power sample " + std::to_string(i) + " is negative or non-finite");
    }
    if (i > 0 && !(s.t_s > samples[i - 1].t_s)) {
      throw ProfileError("power trace timestamps must increase strictly (sample " +
                         std::to_string(i) + ")");
    }
  }
}

PowerTrace read_power_trace(std::istream& is) {
  PowerTrace trace;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("source=");
      if (pos != std::string::npos) trace.source = line.substr(pos + 7);
      continue;
    }
    if (!header) {
      if (line != "t_s,watts") {
        throw ProfileError("line " + std::to_string(lineno) + ": expected header 't_s,watts'");
      }
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    PowerSample s;
    const char* b = line.data();
    const char* e = b + line.size();
    bool ok = comma != std::string::npos;
    if (ok) {
      auto r1 = std::from_chars(b, b + comma, s.t_s);
      auto r2 = std::from_chars(b + comma + 1, e, s.watts);
      ok = r1.ec == std::errc() && r1.ptr == b + comma && r2.ec == std::errc() && r2.ptr == e;
    }
    if (!ok) throw ProfileError("line " + std::to_string(lineno) + ": malformed sample '" + line + "'");
    trace.samples.push_back(s);
  }
  trace.validate();
  return trace;
}

PowerTrace load_power_trace(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ProfileError("cannot open power trace " + path.string());
  try {
    return read_power_trace(is);
  } catch (const ProfileError& e) {
    throw ProfileError(path.string() + ": " + e.what());
  }
}

void write_power_trace(std::ostream& os, const PowerTrace& trace) {
  if (!trace.source.empty()) os << "# source=" << trace.source << '\n';
  os << "t_s,watts\n";
  os.precision(17);
  for (const auto& s : trace.samples) os << s.t_s << ',' << s.watts << '\n';
}

double integrate_energy(const PowerTrace& trace, Quadrature q) {
  if (trace.samples.size() < 2) throw ProfileError("energy integration needs at least 2 samples");
  trace.validate();
  double e = 0.0;
  for (std::size_t i = 0; i + 1 < trace.samples.size(); ++i) {
    const auto& a = trace.samples[i];
    const auto& b = trace.samples[i + 1];
    const double dt = b.t_s - a.t_s;
    if (!(dt > 0.0)) {
      throw ProfileError("non-positive sampling interval after sample " + std::to_string(i));
    }
    e += q == Quadrature::kLeftRiemann ? a.watts * dt : 0.5 * (a.watts + b.watts) * dt;
  }
  return e;
}

double integrate_energy_fixed(const PowerTrace& trace, double dt) {
  if (trace.samples.size() < 2) throw ProfileError("energy integration needs at least 2 samples");
  if (!(dt > 0.0)) throw ProfileError("sampling interval must be positive");
  trace.validate();
  double e = 0.0;
  for (std::size_t i = 0; i + 1 < trace.samples.size(); ++i) e += trace.samples[i].watts * dt;
  return e;
}

ProfileReport profile(const Model& m, const Shape& input_shape,
                      const std::optional<PowerTrace>& trace, Quadrature q) {
  ProfileReport r = count_flops(m, input_shape);
  if (trace) {
    trace->validate();
    r.energy_j = integrate_energy(*trace, q);
    r.energy_source = trace->source;
  }
  return r;
}

std::string format_engineering(double value, const std::string& unit) {
  if (value == 0.0 || !std::isfinite(value)) {
    std::ostringstream os;
    os << value << ' ' << unit;
    return os.str();
  }
  const double mag = std::abs(value);
  int exp10 = static_cast<int>(std::floor(std::log10(mag)));
  // Round to 3 significant figures first so 999.96 becomes 1.00 x 10^3.
  const double rounded = std::round(value / std::pow(10.0, exp10 - 2)) * std::pow(10.0, exp10 - 2);
  exp10 = static_cast<int>(std::floor(std::log10(std::abs(rounded))));
  int eng = exp10 >= 0 ? exp10 / 3 * 3 : -((-exp10 + 2) / 3 * 3);
  const double mantissa = rounded / std::pow(10.0, eng);
  const int decimals = std::max(0, 2 - (exp10 - eng));
  std::string out = fixed(mantissa, decimals);
  if (eng != 0) out += " × 10" + superscript(eng);
  return out + ' ' + unit;
}

void write_comparison_csv(std::ostream& os, const std::vector<ProfileReport>& reports) {
  os << "model,params,flops,flops_g,energy_mj\n";
  for (const auto& r : reports) {
    os << r.model << ',' << r.total_params << ',' << r.total_flops << ',' << fixed(r.flops_g(), 4)
       << ',';
    if (r.energy_j) os << fixed(*r.energy_mj(), 3);
    os << '\n';
  }
}

}  // namespace cs3d
