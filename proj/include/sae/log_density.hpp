#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sae {

// A differentiable log density over an unconstrained parameter vector.
// Implementations must be safe to call concurrently from several threads.
class LogDensity {
 public:
  virtual ~LogDensity() = default;

  virtual std::size_t dimension() const = 0;

  // Returns log p(x) up to a constant and writes d log p / dx into grad.
  virtual double log_density(std::span<const double> x,
                             std::span<double> grad) const = 0;

  // Names of the constrained parameters written by constrain().
  virtual std::vector<std::string> parameter_names() const;
  virtual std::size_t constrained_dimension() const { return dimension(); }
  // Maps an unconstrained point to the constrained scale stored in draws.
  virtual void constrain(std::span<const double> x,
                         std::span<double> out) const;
};

// Wraps a callable (x, grad) -> value; parameters are stored unchanged.
class FunctionDensity final : public LogDensity {
 public:
  using Fn = std::function<double(std::span<const double>, std::span<double>)>;

  FunctionDensity(std::size_t dim, Fn fn, std::vector<std::string> names = {})
      : dim_(dim), fn_(std::move(fn)), names_(std::move(names)) {}

  std::size_t dimension() const override { return dim_; }
  double log_density(std::span<const double> x,
                     std::span<double> grad) const override {
    return fn_(x, grad);
  }
  std::vector<std::string> parameter_names() const override;

 private:
  std::size_t dim_;
  Fn fn_;
  std::vector<std::string> names_;
};

}  // namespace sae
