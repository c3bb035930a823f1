#pragma once

#include "litsynth/core/event_log.hpp"
#include "litsynth/llm/gateway.hpp"

namespace litsynth {

/// What every model-driven stage needs: the gateway and the shared event log.
struct StageContext {
    llm::Gateway& gateway;
    EventLog& log;
};

}  // namespace litsynth
