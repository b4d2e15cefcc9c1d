use std::collections::BTreeMap;

use crate::engine::{self, StepDraft};
use crate::error::{Error, Result};
use crate::event::EventKind;
use crate::ids::{AgentId, StageId, TaskId};
use crate::state::{Lifecycle, TaskState};
use crate::world::{TaskOutcome, World};

/// Registers a new task group. The first agent is the task's manager.
pub fn new_task(world: &mut World, instruction: &str, agent_ids: &[AgentId]) -> Result<TaskId> {
    if instruction.trim().is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let Some(manager) = agent_ids.first() else {
        return Err(Error::EmptyGroup);
    };
    let mut members: Vec<AgentId> = Vec::new();
    for id in agent_ids {
        world.agent(id)?;
        if !members.contains(id) {
            members.push(id.clone());
        }
    }
    let task_id = world.ids.task();
    for id in &members {
        world.agent_mut(id)?.task_refs.insert(task_id.clone());
    }
    world.registry.tasks.insert(
        task_id.clone(),
        TaskState {
            task_id: task_id.clone(),
            instruction: instruction.to_string(),
            manager_id: manager.clone(),
            agent_ids: members.clone(),
            stage_ids: Vec::new(),
            current_stage_index: None,
            comm_queue: Default::default(),
            status: Lifecycle::Init,
            shared_info: BTreeMap::new(),
        },
    );
    world.emit(EventKind::TaskCreated {
        task_id: task_id.clone(),
        manager_id: manager.clone(),
        agent_ids: members,
    });
    Ok(task_id)
}

/// Starts the stage after the current one. With no stage left the task is
/// finished and cleared, and `None` is returned.
pub fn advance_stage(world: &mut World, task_id: &str) -> Result<Option<StageId>> {
    let task = world.task(task_id)?;
    if task.status == Lifecycle::Finished {
        return Err(Error::Sequencing(format!("task `{task_id}` already finished")));
    }
    let next_index = match task.current_stage_index {
        None => 0,
        Some(i) => {
            let current = world.stage(&task.stage_ids[i])?;
            match current.status {
                Lifecycle::Finished => i + 1,
                // A failed stage halted the task; advancing resumes it.
                Lifecycle::Failed if task.status == Lifecycle::Failed => i + 1,
                status => {
                    return Err(Error::Sequencing(format!(
                        "stage `{}` is {status:?}, not finished",
                        current.stage_id
                    )))
                }
            }
        }
    };

    let Some(stage_id) = task.stage_ids.get(next_index).cloned() else {
        finish_task(world, task_id, Lifecycle::Finished, None)?;
        return Ok(None);
    };
    let task_instruction = task.instruction.clone();
    {
        let task = world.task_mut(task_id)?;
        task.current_stage_index = Some(next_index);
        task.status = Lifecycle::Running;
    }
    let stage = world
        .registry
        .stages
        .get_mut(&stage_id)
        .ok_or_else(|| Error::UnknownStage(stage_id.clone()))?;
    stage.status = Lifecycle::Running;
    let objective = stage.objective.clone();
    let allocation = stage.agent_allocation.clone();
    world.emit(EventKind::StageStarted {
        task_id: task_id.to_string(),
        stage_id: stage_id.clone(),
    });

    // Each allocated agent opens the stage with a planning step; it is the
    // stage's first step and carries the objectives later skills rely on.
    for (agent_id, sub_goal) in allocation {
        let draft = StepDraft::skill(
            "planning",
            sub_goal.clone(),
            format!(
                "Task: {task_instruction}\nStage objective: {objective}\nYour sub-goal: {sub_goal}"
            ),
        )
        .with_defaults(task_id, &stage_id);
        if let Err(err) = engine::append_steps(world, &agent_id, vec![draft], &format!("stage {stage_id} start")) {
            world.warn(Some(&agent_id), format!("could not open stage {stage_id}: {err}"));
        }
    }
    Ok(Some(stage_id))
}

/// Marks the task terminal, records the outcome and clears it.
pub(crate) fn finish_task(world: &mut World, task_id: &str, status: Lifecycle, reason: Option<String>) -> Result<()> {
    world.task_mut(task_id)?.status = status;
    world.emit(EventKind::TaskFinished {
        task_id: task_id.to_string(),
        status,
        reason: reason.clone(),
    });
    world.outcomes.insert(
        task_id.to_string(),
        TaskOutcome {
            status,
            reason,
            tick: world.tick,
        },
    );
    clear_task(world, task_id)
}

/// Removes the task and its stages, releases the members' steps of this task
/// and any wait locks tied to it. Persistent memory is left alone.
pub fn clear_task(world: &mut World, task_id: &str) -> Result<()> {
    let task = world
        .registry
        .tasks
        .remove(task_id)
        .ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
    for stage_id in &task.stage_ids {
        world.registry.stages.remove(stage_id);
    }
    for agent_id in &task.agent_ids {
        engine::release_task_steps(world, agent_id, task_id);
        if let Some(agent) = world.registry.agents.get_mut(agent_id) {
            agent.task_refs.remove(task_id);
            for stage_id in &task.stage_ids {
                agent.stage_refs.remove(stage_id);
            }
        }
    }
    let stale: Vec<String> = world
        .waits
        .values()
        .filter(|w| w.task_id == task_id)
        .map(|w| w.wait_id.clone())
        .collect();
    for w in stale {
        crate::messaging::release_wait(world, &w, "task cleared");
    }
    world.emit(EventKind::TaskCleared {
        task_id: task_id.to_string(),
    });
    if !world.outcomes.contains_key(task_id) {
        world.outcomes.insert(
            task_id.to_string(),
            TaskOutcome {
                status: task.status,
                reason: Some("cleared".into()),
                tick: world.tick,
            },
        );
    }
    Ok(())
}
