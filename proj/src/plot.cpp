#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "epsam/image_io.hpp"
#include "epsam/selftrain.hpp"

namespace epsam {

namespace {

// 3x5 digit glyphs for axis labels
const uint8_t kGlyphs[11][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
    {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
    {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
    {0b111, 0b001, 0b111, 0b001, 0b111},  // 3
    {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
    {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
    {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
    {0b111, 0b001, 0b010, 0b010, 0b010},  // 7
    {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
    {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
    {0b000, 0b000, 0b000, 0b000, 0b010},  // '.'
};

struct Canvas {
  ImageU8 img;
  Canvas(int h, int w) : img(h, w, 3) {
    std::fill(img.data.begin(), img.data.end(), 255);
  }
  void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
  }
  void line(int y0, int x0, int y1, int x1, uint8_t r, uint8_t g, uint8_t b) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(y0, x0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  void text(int y, int x, const std::string& s) {
    for (char c : s) {
      int gi = (c == '.') ? 10 : c - '0';
      if (gi < 0 || gi > 10) {
        x += 4;
        continue;
      }
      for (int gy = 0; gy < 5; ++gy)
        for (int gx = 0; gx < 3; ++gx)
          if (kGlyphs[gi][gy] & (1 << (2 - gx))) set(y + gy, x + gx, 40, 40, 40);
      x += 4;
    }
  }
};

}  // namespace

// One x tick per trend row; Dice and IoU polylines on a 0..100 percent axis.
void render_trend_plot(const std::vector<IterationMetrics>& rows,
                       const std::filesystem::path& out_png, int* tick_count) {
  const int W = 480, H = 320;
  const int left = 40, right = 16, top = 16, bottom = 32;
  Canvas c(H, W);

  const int x0 = left, x1 = W - right;
  const int y0 = H - bottom, y1 = top;
  c.line(y0, x0, y0, x1, 0, 0, 0);
  c.line(y0, x0, y1, x0, 0, 0, 0);

  for (int pct : {0, 50, 100}) {
    int y = y0 - (y0 - y1) * pct / 100;
    c.line(y, x0 - 3, y, x0, 0, 0, 0);
    c.text(y - 2, 6, std::to_string(pct));
  }

  const int n = static_cast<int>(rows.size());
  if (tick_count) *tick_count = n;
  if (n == 0) {
    write_png(out_png, c.img);
    return;
  }
  auto tick_x = [&](int i) {
    if (n == 1) return (x0 + x1) / 2;
    return x0 + (x1 - x0) * i / (n - 1);
  };
  for (int i = 0; i < n; ++i) {
    c.line(y0, tick_x(i), y0 + 3, tick_x(i), 0, 0, 0);
    c.text(y0 + 6, tick_x(i) - 2, std::to_string(i));
  }
  auto val_y = [&](double frac) {
    frac = std::clamp(frac, 0.0, 1.0);
    return y0 - static_cast<int>(std::lround((y0 - y1) * frac));
  };
  for (int i = 0; i + 1 < n; ++i) {
    c.line(val_y(rows[i].mean_dice), tick_x(i), val_y(rows[i + 1].mean_dice),
           tick_x(i + 1), 200, 40, 40);
    c.line(val_y(rows[i].mean_iou), tick_x(i), val_y(rows[i + 1].mean_iou),
           tick_x(i + 1), 40, 40, 200);
  }
  for (int i = 0; i < n; ++i) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        c.set(val_y(rows[i].mean_dice) + dy, tick_x(i) + dx, 200, 40, 40);
        c.set(val_y(rows[i].mean_iou) + dy, tick_x(i) + dx, 40, 40, 200);
      }
  }
  write_png(out_png, c.img);
}

}  // namespace epsam
