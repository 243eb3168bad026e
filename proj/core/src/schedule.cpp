#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "btseg/autolr.hpp"

namespace btseg {

void Schedule::validate() const {
  if (warmup_epochs < 1) throw std::invalid_argument("warmup_epochs must be >= 1");
  switch (kind) {
    case ScheduleKind::Constant:
      if (!(eta > 0.0)) throw std::invalid_argument("constant eta must be > 0");
      break;
    case ScheduleKind::StepDecay:
      if (!(step.eta0 > 0.0) || !(step.decay > 0.0) || step.step_epochs < 1) {
        throw std::invalid_argument("invalid step-decay parameters");
      }
      break;
    case ScheduleKind::Piecewise:
      if (table.empty() || table.front().first != 0) {
        throw std::invalid_argument("piecewise table must start at epoch 0");
      }
      for (std::size_t i = 0; i < table.size(); ++i) {
        if (!(table[i].second > 0.0)) throw std::invalid_argument("piecewise eta must be > 0");
        if (i > 0 && table[i].first <= table[i - 1].first) {
          throw std::invalid_argument("piecewise epochs must be increasing");
        }
      }
      break;
    case ScheduleKind::AutoLR:
      population.validate();
      break;
  }
}

double Schedule::target_eta(int global_epoch) const {
  switch (kind) {
    case ScheduleKind::Constant:
      return eta;
    case ScheduleKind::StepDecay:
      return step.eta0 * std::pow(step.decay, double(global_epoch / step.step_epochs));
    case ScheduleKind::Piecewise: {
      std::size_t i = 0;
      while (i + 1 < table.size() && table[i + 1].first <= global_epoch) ++i;
      return table[i].second;
    }
    case ScheduleKind::AutoLR:
      break;
  }
  throw std::logic_error("AutoLR rates come from the population, not the schedule");
}

int Schedule::epochs_since_change(int global_epoch) const {
  switch (kind) {
    case ScheduleKind::Constant:
      return global_epoch;
    case ScheduleKind::StepDecay:
      // decay == 1 never changes the value.
      return step.decay == 1.0 ? global_epoch : global_epoch % step.step_epochs;
    case ScheduleKind::Piecewise: {
      std::size_t i = 0;
      while (i + 1 < table.size() && table[i + 1].first <= global_epoch) ++i;
      while (i > 0 && table[i - 1].second == table[i].second) --i;
      return global_epoch - table[i].first;
    }
    case ScheduleKind::AutoLR:
      break;
  }
  throw std::logic_error("AutoLR rates come from the population, not the schedule");
}

double warmup_scale(int epochs_since_lr_change, int warmup_epochs) {
  return std::min(1.0, double(epochs_since_lr_change + 1) / double(warmup_epochs));
}

double effective_lr(const Schedule& schedule, int global_epoch, int epochs_since_lr_change) {
  return schedule.target_eta(global_epoch) *
         warmup_scale(epochs_since_lr_change, schedule.warmup_epochs);
}

double effective_lr(const Schedule& schedule, int global_epoch) {
  return effective_lr(schedule, global_epoch, schedule.epochs_since_change(global_epoch));
}

}  // namespace btseg
