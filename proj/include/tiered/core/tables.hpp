#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tiered {

/// Dense per-(h, s, a) table of doubles, h-major.
class StateActionTable {
  public:
    StateActionTable() = default;
    StateActionTable(std::size_t horizon, std::size_t states, std::size_t actions,
                     double fill = 0.0)
        : H_(horizon), S_(states), A_(actions), data_(horizon * states * actions, fill) {}

    std::size_t horizon() const { return H_; }
    std::size_t states() const { return S_; }
    std::size_t actions() const { return A_; }

    double& operator()(std::size_t h, std::size_t s, std::size_t a) {
        return data_[(h * S_ + s) * A_ + a];
    }
    double operator()(std::size_t h, std::size_t s, std::size_t a) const {
        return data_[(h * S_ + s) * A_ + a];
    }

    std::span<double> row(std::size_t h, std::size_t s) {
        return {data_.data() + (h * S_ + s) * A_, A_};
    }
    std::span<const double> row(std::size_t h, std::size_t s) const {
        return {data_.data() + (h * S_ + s) * A_, A_};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    friend bool operator==(const StateActionTable&, const StateActionTable&) = default;

  private:
    std::size_t H_ = 0, S_ = 0, A_ = 0;
    std::vector<double> data_;
};

/// Dense per-(h, s) table. Value tables carry an extra terminal layer h = H
/// that stays zero.
class StateTable {
  public:
    StateTable() = default;
    StateTable(std::size_t layers, std::size_t states, double fill = 0.0)
        : layers_(layers), S_(states), data_(layers * states, fill) {}

    std::size_t layers() const { return layers_; }
    std::size_t states() const { return S_; }

    double& operator()(std::size_t h, std::size_t s) { return data_[h * S_ + s]; }
    double operator()(std::size_t h, std::size_t s) const { return data_[h * S_ + s]; }

    std::span<double> layer(std::size_t h) { return {data_.data() + h * S_, S_}; }
    std::span<const double> layer(std::size_t h) const { return {data_.data() + h * S_, S_}; }

    const std::vector<double>& data() const { return data_; }
    void fill(double v) { data_.assign(data_.size(), v); }

    friend bool operator==(const StateTable&, const StateTable&) = default;

  private:
    std::size_t layers_ = 0, S_ = 0;
    std::vector<double> data_;
};

} // namespace tiered
