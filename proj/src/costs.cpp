#include "mmtm/costs.hpp"

#include <sstream>

#include "mmtm/errors.hpp"

namespace mmtm {

std::uint64_t CostReport::total_params() const {
  std::uint64_t n = 0;
  for (const auto& r : rows) n += r.params;
  return n;
}

std::uint64_t CostReport::total_macs() const {
  std::uint64_t n = 0;
  for (const auto& r : rows) n += r.macs;
  return n;
}

std::string CostReport::to_csv() const {
  std::ostringstream out;
  out << "component,params,macs\n";
  for (const auto& r : rows) out << r.name << ',' << r.params << ',' << r.macs << '\n';
  out << "total," << total_params() << ',' << total_macs() << '\n';
  return out.str();
}

std::uint64_t linear_params(std::uint64_t out, std::uint64_t in) { return out * in + out; }
std::uint64_t linear_macs(std::uint64_t out, std::uint64_t in) { return out * in; }

std::uint64_t conv_params(std::uint64_t kernel, std::uint64_t cin, std::uint64_t cout) {
  return kernel * kernel * cin * cout + cout;
}

std::uint64_t conv_macs(std::uint64_t out_h, std::uint64_t out_w, std::uint64_t kernel, std::uint64_t cin,
                        std::uint64_t cout) {
  return out_h * out_w * kernel * kernel * cin * cout;
}

std::uint64_t gating_macs(const Shape& feature_shape) { return shape_volume(feature_shape); }

ModuleMacs mmtm_macs(const MmtmConfig& config, std::span<const Shape> feature_shapes) {
  config.validate();
  const std::uint64_t cz = config.bottleneck_size();
  ModuleMacs m;
  m.projection = linear_macs(cz, config.total_channels());
  for (auto c : config.channel_counts) m.projection += linear_macs(c, cz);
  for (std::size_t i = 0; i < feature_shapes.size(); ++i)
    if (config.gated(i)) m.gating += gating_macs(feature_shapes[i]);
  return m;
}

ModuleMacs conv_mmtm_macs(const MmtmConfig& config, std::span<const Shape> feature_shapes, bool use_sum) {
  config.validate();
  if (feature_shapes.empty()) throw DimensionError("conv MMTM cost needs feature shapes");
  const Shape spatial(feature_shapes[0].begin(), feature_shapes[0].end() - 1);
  for (const auto& s : feature_shapes) {
    if (Shape(s.begin(), s.end() - 1) != spatial) {
      throw DimensionError("conv MMTM: unaligned spatial dimensions, " + shape_to_string(feature_shapes[0]) + " vs " +
                           shape_to_string(s));
    }
  }
  const std::uint64_t positions = shape_volume(spatial);
  const std::uint64_t cz = config.bottleneck_size();
  ModuleMacs m;
  m.projection = positions * linear_macs(cz, config.total_channels());
  for (auto c : config.channel_counts) m.projection += positions * linear_macs(c, cz);
  if (!use_sum)
    for (std::size_t i = 0; i < feature_shapes.size(); ++i)
      if (config.gated(i)) m.gating += gating_macs(feature_shapes[i]);
  return m;
}

ModuleMacs se_macs(const Shape& feature_shape) {
  const std::uint64_t c = feature_shape.back();
  const std::uint64_t r = se_bottleneck(c);
  return ModuleMacs{linear_macs(r, c) + linear_macs(c, r), gating_macs(feature_shape)};
}

std::uint64_t count_params(const FusionPoint& point) { return point.parameter_count(); }

std::uint64_t count_macs(const FusionPoint& point, std::span<const Shape> feature_shapes) {
  switch (point.kind()) {
    case FusionKind::Mmtm: return mmtm_macs(point.config(), feature_shapes).total();
    case FusionKind::ConvMmtm: return conv_mmtm_macs(point.config(), feature_shapes, false).total();
    case FusionKind::ConvMmtmSum: return conv_mmtm_macs(point.config(), feature_shapes, true).total();
    case FusionKind::SeLate: {
      std::uint64_t n = 0;
      for (const auto& s : feature_shapes) n += se_macs(s).total();
      return n;
    }
    default: return 0;
  }
}

CostReport report(const FusionNetwork& net) {
  CostReport rep;
  const auto& streams = net.streams();
  const std::size_t classes = streams[0].num_classes;
  for (const auto& spec : streams) {
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
      const Shape in = spec.boundary_shape(b);
      const BlockSpec& blk = spec.blocks[b];
      CostRow row{spec.name + ".block" + std::to_string(b + 1), 0, 0};
      if (blk.kind == BlockKind::Conv) {
        row.params = conv_params(blk.kernel, in[2], blk.out_channels);
        row.macs = conv_macs(in[0], in[1], blk.kernel, in[2], blk.out_channels);
      } else {
        row.params = linear_params(blk.out_channels, shape_volume(in));
        row.macs = linear_macs(blk.out_channels, shape_volume(in));
      }
      rep.rows.push_back(std::move(row));
    }
    if (net.config().head == HeadPolicy::Late) {
      const std::uint64_t width = shape_volume(spec.boundary_shape(spec.blocks.size()));
      rep.rows.push_back({spec.name + ".head", linear_params(classes, width), linear_macs(classes, width)});
    }
  }
  if (net.config().head == HeadPolicy::Joint) {
    std::uint64_t width = 0;
    for (const auto& s : streams) width += shape_volume(s.boundary_shape(s.blocks.size()));
    rep.rows.push_back({"joint_head", linear_params(classes, width), linear_macs(classes, width)});
  }
  const auto& plan = net.config().plan;
  for (std::size_t p = 0; p < net.points().size(); ++p) {
    std::vector<Shape> shapes;
    for (std::size_t s = 0; s < streams.size(); ++s) shapes.push_back(streams[s].boundary_shape(plan[p].after_block[s]));
    const FusionPoint& point = net.points()[p];
    rep.rows.push_back({"fusion" + std::to_string(p + 1) + "." + std::string(fusion_kind_name(point.kind())),
                        count_params(point), count_macs(point, shapes)});
  }
  return rep;
}

}  // namespace mmtm
